"""Executing behavior policies in an environment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ddpg import Trajectory
from .envs import Env, make_env
from .nn import ConfigurationError
from .policies import GaussianPolicy


class RolloutWorker:
    """Owns one environment; with ``persistent=True`` an unfinished episode
    carries over to the next :meth:`collect` call instead of being reset."""

    def __init__(self, env: Env, persistent=False):
        self.env = env
        self.persistent = persistent
        self._obs = None

    def collect(self, policy, rng, n_steps=None, n_episodes=None, record_pre_clip=True) -> Trajectory:
        if (n_steps is None) == (n_episodes is None):
            raise ConfigurationError("give exactly one of n_steps and n_episodes")
        budget = n_steps if n_steps is not None else n_episodes
        if budget < 0:
            raise ConfigurationError("rollout budget must be non-negative")
        spec = self.env.spec
        states, actions, rewards, next_states = [], [], [], []
        terminals, starts, ends, pre_clips = [], [], [], []
        if not self.persistent or self.env.done:
            self._obs = None
        finished = 0
        while (n_steps is not None and len(rewards) < n_steps) or (n_episodes is not None and finished < n_episodes):
            if self._obs is None:
                self._obs = self.env.reset()
                policy.reset()
                starts.append(True)
            else:
                starts.append(False)
            action, pre_clip = policy.sample(self._obs, rng)
            obs, reward, done, terminal = self.env.step(action)
            states.append(self._obs)
            actions.append(np.asarray(action, dtype=np.float64).reshape(spec.action_dim))
            rewards.append(reward)
            next_states.append(obs)
            terminals.append(terminal)
            ends.append(done)
            if record_pre_clip:
                pre_clips.append(pre_clip)
            if done:
                finished += 1
                self._obs = None
            else:
                self._obs = obs
        if not rewards:
            return Trajectory.empty(spec.obs_dim, spec.action_dim, policy.tag,
                                    with_pre_clip=record_pre_clip and isinstance(policy, GaussianPolicy))
        pre = None
        if record_pre_clip and all(p is not None for p in pre_clips):
            pre = np.array(pre_clips, dtype=np.float64).reshape(len(rewards), spec.action_dim)
        return Trajectory(
            np.array(states), np.array(actions), np.array(rewards, dtype=np.float64), np.array(next_states),
            np.array(terminals, dtype=bool), np.array(starts, dtype=bool), np.array(ends, dtype=bool),
            pre, policy.tag,
        )


@dataclass
class RolloutRequest:
    policy: object
    env_name: str
    seed: int
    n_steps: int | None = None
    n_episodes: int | None = None
    record_pre_clip: bool = True
    env_constants: dict | None = None

    def __post_init__(self):
        if (self.n_steps is None) == (self.n_episodes is None):
            raise ConfigurationError("give exactly one of n_steps and n_episodes")


def collect(request: RolloutRequest) -> Trajectory:
    """Fresh environment and generator seeded from ``request.seed``."""
    env_seed, policy_seed = np.random.SeedSequence(request.seed).spawn(2)
    env = make_env(request.env_name, np.random.default_rng(env_seed), **(request.env_constants or {}))
    worker = RolloutWorker(env)
    return worker.collect(request.policy, np.random.default_rng(policy_seed), request.n_steps,
                          request.n_episodes, request.record_pre_clip)
