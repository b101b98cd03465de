"""Experiment configuration.

A config file is a flat list of ``key = value`` lines (an optional
``[experiment]`` header is accepted). Every key is optional; unknown keys are
rejected. Environment dynamics constants use an ``env.`` prefix, e.g.
``env.max_episode_steps = 100``. Lists are comma separated; ``none`` clears an
optional value.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields

from .envs import ENVIRONMENTS
from .nn import ConfigurationError

ALGORITHMS = ("meta_independent", "meta_adaptive_variance", "ddpg_gaussian", "ddpg_ou")
SECTION = "experiment"


@dataclass
class ExperimentConfig:
    env: str = "pendulum"
    algorithm: str = "meta_independent"
    seeds: tuple = (0, 1, 2)
    total_steps: int = 300_000

    # loop counts
    epoch_cycles: int = 20
    rollout_steps: int = 200
    train_steps: int = 50
    lookahead_train_steps: int = 50
    exploration_rollout_steps: int = 100
    evaluation_steps: int = 200
    exploration_train_steps: int = 1

    # optimization
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    meta_lr: float = 1e-4
    gamma: float = 0.99
    tau: float = 0.001
    batch_size: int = 64
    buffer_capacity: int = 1_000_000
    clip_norm: float | None = None

    # networks
    hidden: tuple = (64, 64)
    layer_norm: bool = True
    final_init_scale: float = 3e-3

    # baseline exploration noise, in units of the action half-range
    noise_scale: float = 0.2
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 1.0

    # teacher
    init_log_std_fraction: float = 0.2
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    teacher_mean_activation: str = "tanh"
    subsample_rate: float = 1.0
    meta_baseline: bool = False
    meta_normalize: bool = False
    fresh_eval_after_buffer_update: bool = False

    # evaluation and logging
    discounted_eval: bool = False
    persistent_exploration: bool = True
    log_visitation: bool = False

    env_constants: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {list(ALGORITHMS)}")
        if self.env not in ENVIRONMENTS:
            raise ConfigurationError(f"unknown environment {self.env!r}; choose from {sorted(ENVIRONMENTS)}")
        for name in ("rollout_steps", "train_steps", "exploration_rollout_steps", "evaluation_steps",
                     "exploration_train_steps", "batch_size", "buffer_capacity"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("epoch_cycles", "total_steps", "lookahead_train_steps"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not 0.0 < self.subsample_rate <= 1.0:
            raise ConfigurationError("subsample_rate must lie in (0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")
        if self.teacher_mean_activation not in ("tanh", "linear"):
            raise ConfigurationError("teacher_mean_activation must be tanh or linear")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def is_meta(self):
        return self.algorithm.startswith("meta_")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self):
        lines = [f"[{SECTION}]"]
        for f in fields(self):
            if f.name == "env_constants":
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        for key, value in sorted(self.env_constants.items()):
            lines.append(f"env.{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


PRESETS = {
    "default": {},
    # settings quoted for tasks that need long exploration rollouts
    "long_horizon": {
        "exploration_rollout_steps": 1000,
        "evaluation_steps": 2000,
        "train_steps": 500,
        "lookahead_train_steps": 500,
        "exploration_train_steps": 100,
    },
}


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_scalar(text):
    t = text.strip()
    if t.lower() in ("true", "yes", "on"):
        return True
    if t.lower() in ("false", "no", "off"):
        return False
    if t.lower() == "none":
        return None
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def coerce(key, text):
    """Typed value for config ``key`` from its string form."""
    if key.startswith("env."):
        return _parse_scalar(text)
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    t = text.strip()
    try:
        if key in ("seeds", "hidden"):
            return tuple(int(v) for v in t.split(",") if v.strip())
        if kind == "bool":
            value = _parse_scalar(t)
            if not isinstance(value, bool):
                raise ValueError(t)
            return value
        if kind == "int":
            return int(float(t)) if "e" in t.lower() else int(t)
        if kind == "float":
            return float(t)
        if kind == "float | None":
            return None if t.lower() == "none" else float(t)
        if kind == "str":
            return t
    except ValueError:
        raise ConfigurationError(f"bad value {text!r} for {key}") from None
    raise ConfigurationError(f"{key} cannot be set from text")


def apply_overrides(config: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply ``(key, text)`` pairs or ``key=value`` strings."""
    changes, env_constants = {}, dict(config.env_constants)
    for item in pairs:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigurationError(f"override {item!r} is not key=value")
            key, text = item.split("=", 1)
        else:
            key, text = item
        key = key.strip()
        if key == "preset":
            changes.update(PRESETS[text.strip()] if text.strip() in PRESETS else _bad_preset(text))
            continue
        value = coerce(key, text)
        if key.startswith("env."):
            env_constants[key[4:]] = value
        else:
            changes[key] = value
    changes["env_constants"] = env_constants
    return config.replace(**changes)


def _bad_preset(name):
    raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")


def parse_config_text(text, base=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = f"[{SECTION}]\n" + text
    parser.read_string(text)
    pairs = []
    for section in parser.sections():
        if section != SECTION:
            raise ConfigurationError(f"unexpected config section [{section}]")
        pairs.extend(parser.items(section))
    preset = [p for p in pairs if p[0] == "preset"]
    rest = [p for p in pairs if p[0] != "preset"]
    return apply_overrides(base or ExperimentConfig(), preset + rest)


def load_config(path, base=None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base)
