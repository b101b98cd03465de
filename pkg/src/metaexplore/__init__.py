"""DDPG with a meta-learned exploration teacher, in plain numpy."""

__version__ = "0.1.0"
