"""Meta-policy gradient for the exploration teacher.

The teacher is scored by how much a short lookahead DDPG update on its data
improves the student's return. That scalar multiplies the gradient of the
log-likelihood of the teacher's own actions (REINFORCE); environment
transition and initial-state terms do not depend on the teacher and drop out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ddpg import Trajectory
from .nn import AdamState, ConfigurationError, GradientBundle, NonFiniteGradientError, adam_step
from .policies import GaussianPolicy

log = logging.getLogger(__name__)


class NoCompleteEpisodeError(ValueError):
    pass


@dataclass(frozen=True)
class ReturnEstimate:
    value: float
    n_episodes: int
    policy_tag: str = ""
    truncated: bool = False


@dataclass(frozen=True)
class MetaReward:
    value: float
    new: ReturnEstimate
    old: ReturnEstimate


@dataclass(frozen=True)
class TeacherUpdateRecord:
    meta_reward: MetaReward
    n_transitions_used: int
    subsample_rate: float
    gradient_norm: float
    applied: bool = True


def estimate_return(trajectories, gamma=None, allow_truncated=False, policy_tag=None) -> ReturnEstimate:
    """Mean per-episode reward sum over complete episodes.

    ``gamma`` switches to discounted sums. With ``allow_truncated`` and no
    complete episode, the mean over episode fragments is used instead (and a
    warning logged).
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    returns = [r for t in trajectories for r in t.episode_returns(gamma)]
    tag = policy_tag if policy_tag is not None else (trajectories[0].behavior if trajectories else "")
    if returns:
        return ReturnEstimate(float(np.mean(returns)), len(returns), tag)
    if not allow_truncated:
        raise NoCompleteEpisodeError("no complete episode to estimate a return from")
    partial = [r for t in trajectories for r in t.episode_returns(gamma, complete_only=False)]
    if not partial:
        raise NoCompleteEpisodeError("no data to estimate a return from")
    log.warning("no complete evaluation episode; using the truncated reward sum")
    return ReturnEstimate(float(np.mean(partial)), len(partial), tag, truncated=True)


def meta_reward(r_new: ReturnEstimate, r_old: ReturnEstimate) -> MetaReward:
    if not (np.isfinite(r_new.value) and np.isfinite(r_old.value)):
        raise ValueError("return estimates must be finite")
    return MetaReward(r_new.value - r_old.value, r_new, r_old)


def teacher_gradient(teacher: GaussianPolicy, d0: Trajectory, meta_r, subsample_rate=1.0, rng=None):
    """``meta_r * sum_t grad log pi_e(a_t | s_t)`` over the teacher's rollout.

    With ``subsample_rate < 1`` a uniform subset of round(rate * T) steps is
    drawn without replacement and the sum rescaled by T / subset size, which
    keeps the estimate unbiased. Returns (GradientBundle, steps used).
    """
    if d0.pre_clip is None:
        raise ConfigurationError("the rollout has no stored pre-clip samples; log-probabilities are undefined")
    n = len(d0)
    if n == 0:
        raise ValueError("empty teacher rollout")
    if not 0.0 < subsample_rate <= 1.0:
        raise ConfigurationError("subsample_rate must lie in (0, 1]")
    value = meta_r.value if isinstance(meta_r, MetaReward) else float(meta_r)
    if subsample_rate < 1.0:
        if rng is None:
            raise ConfigurationError("sub-sampling needs a random generator")
        m = max(1, int(round(subsample_rate * n)))
        idx = np.sort(rng.choice(n, size=m, replace=False))
        states, actions, scale = d0.states[idx], d0.pre_clip[idx], n / m
    else:
        m, states, actions, scale = n, d0.states, d0.pre_clip, 1.0
    if value == 0.0:
        return GradientBundle(None, np.zeros_like(teacher.flat)), m
    grad = teacher.log_prob_grad(states, actions)
    return GradientBundle(None, grad.flat * (value * scale)), m


def teacher_update(teacher: GaussianPolicy, gradient: GradientBundle, adam_state: AdamState, clip_norm=None):
    """Adam ascent on the meta-gradient, then clamp log-std into bounds.

    A non-finite gradient skips the step (logged) and returns False.
    """
    try:
        adam_step(teacher, gradient, adam_state, maximize=True, clip_norm=clip_norm)
    except NonFiniteGradientError:
        log.warning("skipping teacher update: non-finite meta-gradient")
        return False
    teacher.clamp_()
    return True


class MetaRewardShaper:
    """Optional transforms of the raw meta-reward; identity with both flags off."""

    def __init__(self, baseline=False, normalize=False, decay=0.9):
        self.baseline = baseline
        self.normalize = normalize
        self.decay = decay
        self._mean = None
        self._scale = None

    def __call__(self, value):
        out = value
        if self.baseline:
            if self._mean is not None:
                out = value - self._mean
            self._mean = value if self._mean is None else self.decay * self._mean + (1 - self.decay) * value
        if self.normalize:
            self._scale = abs(value) if self._scale is None else self.decay * self._scale + (1 - self.decay) * abs(value)
            if self._scale > 0:
                out = out / self._scale
        return out
