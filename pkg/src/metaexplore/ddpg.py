"""DDPG student: experience storage, critic and actor updates, target tracking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .nn import (
    AdamState,
    ConfigurationError,
    MlpParams,
    NonFiniteGradientError,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from .policies import DeterministicActor


class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray


@dataclass
class Trajectory:
    """Ordered rollout data, one row per environment step.

    ``episode_starts[t]`` marks a step that began an episode inside this
    trajectory and ``episode_ends[t]`` a step after which the episode ended
    (terminal or time limit). ``pre_clip`` holds the raw stochastic draws
    when the behavior policy was a Gaussian teacher.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    episode_starts: np.ndarray
    episode_ends: np.ndarray
    pre_clip: np.ndarray | None = None
    behavior: str = ""

    def __len__(self):
        return self.rewards.shape[0]

    @classmethod
    def empty(cls, obs_dim, action_dim, behavior="", with_pre_clip=False):
        return cls(
            np.zeros((0, obs_dim)), np.zeros((0, action_dim)), np.zeros(0), np.zeros((0, obs_dim)),
            np.zeros(0, dtype=bool), np.zeros(0, dtype=bool), np.zeros(0, dtype=bool),
            np.zeros((0, action_dim)) if with_pre_clip else None, behavior,
        )

    def transitions(self):
        for t in range(len(self)):
            yield Transition(self.states[t], self.actions[t], float(self.rewards[t]),
                             self.next_states[t], bool(self.terminals[t]))

    def episodes(self):
        """(start, stop, complete) row ranges, one per episode fragment."""
        out = []
        start = 0
        for t in range(len(self)):
            if self.episode_ends[t]:
                out.append((start, t + 1, bool(self.episode_starts[start])))
                start = t + 1
        if start < len(self):
            out.append((start, len(self), False))
        return out

    def episode_returns(self, gamma=None, complete_only=True):
        returns = []
        for start, stop, complete in self.episodes():
            if complete_only and not complete:
                continue
            r = self.rewards[start:stop]
            if gamma is not None:
                r = r * gamma ** np.arange(r.shape[0])
            returns.append(float(r.sum()))
        return returns

    def n_goal(self):
        """Number of complete episodes that ended in a true terminal state."""
        return sum(
            1 for start, stop, complete in self.episodes() if complete and self.terminals[stop - 1]
        )

    @staticmethod
    def concat(trajectories):
        trajectories = list(trajectories)
        if not trajectories:
            raise ConfigurationError("nothing to concatenate")
        pre = None
        if all(t.pre_clip is not None for t in trajectories):
            pre = np.concatenate([t.pre_clip for t in trajectories])
        return Trajectory(
            *(np.concatenate([getattr(t, name) for t in trajectories])
              for name in ("states", "actions", "rewards", "next_states", "terminals",
                           "episode_starts", "episode_ends")),
            pre_clip=pre,
            behavior=trajectories[0].behavior,
        )


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling with replacement."""

    def __init__(self, capacity, obs_dim, action_dim):
        if capacity <= 0:
            raise ConfigurationError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.states = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, obs_dim))
        self.terminals = np.zeros(self.capacity)
        self.insertions = 0

    def __len__(self):
        return min(self.insertions, self.capacity)

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory):
        buf = cls(max(len(trajectory), 1), trajectory.states.shape[1], trajectory.actions.shape[1])
        buf.extend(trajectory)
        return buf

    def push(self, transition: Transition):
        state = np.asarray(transition.state, dtype=np.float64)
        action = np.asarray(transition.action, dtype=np.float64)
        if state.shape != (self.obs_dim,) or action.shape != (self.action_dim,):
            raise ConfigurationError("transition dimensions do not match the buffer")
        i = self.insertions % self.capacity
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = transition.reward
        self.next_states[i] = transition.next_state
        self.terminals[i] = float(transition.terminal)
        self.insertions += 1

    def extend(self, trajectory: Trajectory):
        n = len(trajectory)
        if n == 0:
            return
        if trajectory.states.shape[1] != self.obs_dim or trajectory.actions.shape[1] != self.action_dim:
            raise ConfigurationError("trajectory dimensions do not match the buffer")
        if n > self.capacity:
            trajectory = Trajectory(*(getattr(trajectory, f)[-self.capacity:] for f in (
                "states", "actions", "rewards", "next_states", "terminals", "episode_starts", "episode_ends")))
            self.insertions += n - self.capacity
            n = self.capacity
        idx = (self.insertions + np.arange(n)) % self.capacity
        self.states[idx] = trajectory.states
        self.actions[idx] = trajectory.actions
        self.rewards[idx] = trajectory.rewards
        self.next_states[idx] = trajectory.next_states
        self.terminals[idx] = trajectory.terminals
        self.insertions += n

    def sample(self, batch_size, rng) -> Batch:
        size = len(self)
        if size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, size, size=batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.terminals[idx])

    def contents(self):
        """Stored transitions, oldest first."""
        size = len(self)
        start = self.insertions % self.capacity if self.insertions > self.capacity else 0
        order = (start + np.arange(size)) % self.capacity
        return [Transition(self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]),
                           self.next_states[i].copy(), bool(self.terminals[i])) for i in order]


def buffer_push(buffer: ReplayBuffer, transition: Transition):
    buffer.push(transition)


def buffer_sample(buffer: ReplayBuffer, batch_size, rng):
    b = buffer.sample(batch_size, rng)
    return [Transition(*row) for row in zip(b.states, b.actions, b.rewards, b.next_states, b.terminals.astype(bool))]


class Critic:
    """``Q(s, a)`` evaluated on the concatenation ``s || a``."""

    def __init__(self, net: MlpParams, obs_dim):
        if net.layer_sizes[-1] != 1:
            raise ConfigurationError("the critic must have a scalar output")
        if net.layer_sizes[0] <= obs_dim:
            raise ConfigurationError("critic input must hold a state and an action")
        self.net = net
        self.obs_dim = obs_dim

    @classmethod
    def create(cls, obs_dim, action_dim, rng, hidden=(64, 64), layer_norm=True, final_scale=3e-3):
        sizes = (obs_dim + action_dim, *hidden, 1)
        return cls(init_mlp(sizes, rng, "linear", layer_norm, final_scale), obs_dim)

    def forward(self, states, actions):
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        q, cache = mlp_forward(self.net, x)
        return q[:, 0], cache

    def value(self, states, actions):
        return self.forward(states, actions)[0]

    def backward(self, cache, q_grad):
        """Returns (parameter gradients, dL/d state, dL/d action) given dL/dQ per row."""
        grads, d_in = mlp_backward(self.net, cache, np.asarray(q_grad, dtype=np.float64)[:, None])
        return grads, d_in[:, :self.obs_dim], d_in[:, self.obs_dim:]

    def copy(self):
        return Critic(self.net.copy(), self.obs_dim)


@dataclass
class TargetPair:
    target_actor: DeterministicActor
    target_critic: Critic
    tau: float = 0.001

    @classmethod
    def tracking(cls, actor, critic, tau):
        if not 0.0 <= tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")
        return cls(actor.copy(), critic.copy(), tau)

    def copy(self):
        return TargetPair(self.target_actor.copy(), self.target_critic.copy(), self.tau)


def bellman_targets(targets: TargetPair, batch: Batch, gamma):
    next_actions = targets.target_actor.act(batch.next_states)
    q_next = targets.target_critic.value(batch.next_states, next_actions)
    return batch.rewards + gamma * (1.0 - batch.terminals) * q_next


def critic_update(critic: Critic, targets: TargetPair, batch: Batch, gamma, adam_state: AdamState, clip_norm=None):
    """One Adam step on the mean squared Bellman error; returns the pre-update loss.

    Targets are computed from the target networks and treated as constants.
    """
    if batch.rewards.shape[0] == 0:
        raise ValueError("empty batch")
    y = bellman_targets(targets, batch, gamma)
    q, cache = critic.forward(batch.states, batch.actions)
    err = q - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NonFiniteGradientError("non-finite critic loss")
    grads, _, _ = critic.backward(cache, 2.0 * err / err.shape[0])
    adam_step(critic.net, grads, adam_state, clip_norm=clip_norm)
    return loss


def actor_objective_grad(actor: DeterministicActor, critic: Critic, states):
    """Mean of ``Q(s, mu(s))`` over ``states`` and its gradient w.r.t. the actor."""
    actions, actor_cache = actor.forward(states)
    q, critic_cache = critic.forward(states, actions)
    n = q.shape[0]
    _, _, d_action = critic.backward(critic_cache, np.full(n, 1.0 / n))
    return float(np.mean(q)), actor.backward(actor_cache, d_action)


def actor_update(actor: DeterministicActor, critic: Critic, batch: Batch, adam_state: AdamState, clip_norm=None):
    """Ascend the batch mean of ``Q(s, mu(s))``; the critic is left untouched."""
    if batch.states.shape[0] == 0:
        raise ValueError("empty batch")
    objective, grads = actor_objective_grad(actor, critic, batch.states)
    adam_step(actor.net, grads, adam_state, maximize=True, clip_norm=clip_norm)
    return objective


def soft_update(targets: TargetPair, online_actor: DeterministicActor, online_critic: Critic):
    tau = targets.tau
    for target, online in ((targets.target_actor.net, online_actor.net), (targets.target_critic.net, online_critic.net)):
        if target.layout != online.layout:
            raise ConfigurationError("target and online networks differ in shape")
        target.flat *= 1.0 - tau
        target.flat += tau * online.flat


@dataclass
class Learner:
    """Everything ``DDPG(pi, D)`` reads and writes."""

    actor: DeterministicActor
    critic: Critic
    targets: TargetPair
    actor_opt: AdamState
    critic_opt: AdamState
    gamma: float = 0.99
    clip_norm: float | None = None

    @classmethod
    def create(cls, obs_dim, low, high, rng, *, hidden=(64, 64), layer_norm=True, actor_lr=1e-4,
               critic_lr=1e-3, gamma=0.99, tau=0.001, clip_norm=None, final_scale=3e-3):
        actor = DeterministicActor.create(obs_dim, low, high, rng, hidden, layer_norm, final_scale)
        critic = Critic.create(obs_dim, actor.action_dim, rng, hidden, layer_norm, final_scale)
        return cls(actor, critic, TargetPair.tracking(actor, critic, tau),
                   AdamState.for_params(actor.net, actor_lr), AdamState.for_params(critic.net, critic_lr),
                   gamma, clip_norm)

    def copy(self):
        return Learner(self.actor.copy(), self.critic.copy(), self.targets.copy(), self.actor_opt.copy(),
                       self.critic_opt.copy(), self.gamma, self.clip_norm)


@dataclass
class UpdateStats:
    critic_loss: float = float("nan")
    actor_objective: float = float("nan")
    steps: int = 0


def ddpg_update(learner: Learner, source, n_steps, batch_size, rng) -> UpdateStats:
    """``n_steps`` rounds of critic step, actor step and soft target update.

    ``source`` is a :class:`ReplayBuffer` or a :class:`Trajectory`; a
    trajectory is sampled uniformly over its own rows only.
    """
    if isinstance(source, Trajectory):
        if len(source) == 0:
            raise ValueError("cannot train on an empty rollout")
        source = ReplayBuffer.from_trajectory(source)
    if n_steps > 0 and len(source) == 0:
        raise ValueError("cannot train on an empty replay buffer")
    losses, objectives = [], []
    for _ in range(n_steps):
        batch = source.sample(batch_size, rng)
        losses.append(critic_update(learner.critic, learner.targets, batch, learner.gamma,
                                    learner.critic_opt, learner.clip_norm))
        objectives.append(actor_update(learner.actor, learner.critic, batch, learner.actor_opt, learner.clip_norm))
        soft_update(learner.targets, learner.actor, learner.critic)
    if not losses:
        return UpdateStats()
    return UpdateStats(float(np.mean(losses)), float(np.mean(objectives)), n_steps)
