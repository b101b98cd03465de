"""Actor, Gaussian teacher and additive-noise explorers.

Every behavior policy exposes ``sample(obs, rng) -> (executed, pre_clip)``
plus ``reset()`` (called at episode starts) and a string ``tag``. ``pre_clip``
is the raw Gaussian draw for stochastic teachers and None otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ConfigurationError, GradientBundle, MlpParams, NonFiniteGradientError, init_mlp, mlp_backward, mlp_forward

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_STD_BOUNDS = (-5.0, 2.0)


def _bounds(low, high):
    low = np.atleast_1d(np.asarray(low, dtype=np.float64))
    high = np.atleast_1d(np.asarray(high, dtype=np.float64))
    if low.shape != high.shape or np.any(low >= high):
        raise ConfigurationError("action bounds need low < high in every dimension")
    return low, high


def default_log_std(low, high, fraction=0.2):
    """log of ``fraction`` times the half-range of each action dimension."""
    low, high = _bounds(low, high)
    return np.log(fraction * (high - low) / 2.0)


class DeterministicActor:
    """``a = mu(s)``: a tanh-output network rescaled affinely into the action box."""

    tag = "actor"

    def __init__(self, net: MlpParams, low, high):
        self.low, self.high = _bounds(low, high)
        if net.output_activation != "tanh":
            raise ConfigurationError("the actor network must have a tanh output")
        if net.layer_sizes[-1] != self.low.shape[0]:
            raise ConfigurationError("actor output size does not match the action bounds")
        self.net = net
        self.center = (self.high + self.low) / 2.0
        self.half_range = (self.high - self.low) / 2.0

    @classmethod
    def create(cls, obs_dim, low, high, rng, hidden=(64, 64), layer_norm=True, final_scale=3e-3):
        low, high = _bounds(low, high)
        sizes = (obs_dim, *hidden, low.shape[0])
        return cls(init_mlp(sizes, rng, "tanh", layer_norm, final_scale), low, high)

    @property
    def obs_dim(self):
        return self.net.layer_sizes[0]

    @property
    def action_dim(self):
        return self.net.layer_sizes[-1]

    def forward(self, states):
        out, cache = mlp_forward(self.net, states)
        return self.center + self.half_range * out, cache

    def act(self, state):
        return self.forward(state)[0]

    def backward(self, cache, action_grad):
        """Gradient bundle of the actor net given dL/d action."""
        grads, _ = mlp_backward(self.net, cache, np.asarray(action_grad) * self.half_range)
        return grads

    def sample(self, obs, rng=None):
        return self.act(obs), None

    def reset(self):
        pass

    def copy(self):
        return DeterministicActor(self.net.copy(), self.low, self.high)


def act_deterministic(actor: DeterministicActor, state):
    return actor.act(state)


class GaussianPolicy:
    """Stochastic teacher ``N(mean(s), diag(sigma(s)^2))``.

    ``independent`` mode owns a mean network and a state-dependent log-std
    network. ``adaptive_variance`` mode borrows its mean from an actor and owns
    only a state-independent log-std vector; the actor is never differentiated
    or modified through this object.

    All trainable parameters live in ``self.flat``; in independent mode the
    two networks are views into it.
    """

    tag = "teacher"

    def __init__(self, mode, low, high, *, mean_net=None, log_std_net=None, actor=None,
                 log_std=None, log_std_bounds=LOG_STD_BOUNDS, mean_activation="tanh"):
        self.low, self.high = _bounds(low, high)
        self.mode = mode
        self.log_std_bounds = (float(log_std_bounds[0]), float(log_std_bounds[1]))
        if self.log_std_bounds[0] >= self.log_std_bounds[1]:
            raise ConfigurationError("log_std_bounds must be increasing")
        self.center = (self.high + self.low) / 2.0
        self.half_range = (self.high - self.low) / 2.0
        act_dim = self.low.shape[0]
        if mode == "independent":
            if mean_net is None or log_std_net is None:
                raise ConfigurationError("independent mode needs a mean and a log-std network")
            if mean_net.output_activation != mean_activation:
                raise ConfigurationError("mean network output activation does not match mean_activation")
            if mean_net.layer_sizes[-1] != act_dim or log_std_net.layer_sizes[-1] != act_dim:
                raise ConfigurationError("teacher networks must output one value per action dimension")
            if mean_net.layer_sizes[0] != log_std_net.layer_sizes[0]:
                raise ConfigurationError("teacher networks must share the observation size")
            self.mean_activation = mean_activation
            n_mean = mean_net.layout.size
            self.flat = np.concatenate([mean_net.flat, log_std_net.flat])
            self.mean_net = mean_net.rebind(self.flat[:n_mean])
            self.log_std_net = log_std_net.rebind(self.flat[n_mean:])
            self.actor = None
        elif mode == "adaptive_variance":
            if actor is None:
                raise ConfigurationError("adaptive_variance mode needs an actor")
            if actor.action_dim != act_dim:
                raise ConfigurationError("actor action size does not match the bounds")
            if log_std is None:
                log_std = default_log_std(self.low, self.high)
            self.flat = np.array(np.broadcast_to(np.asarray(log_std, dtype=np.float64), (act_dim,)))
            self.actor = actor
            self.mean_net = self.log_std_net = None
            self.mean_activation = None
            self.clamp_()
        else:
            raise ConfigurationError(f"unknown teacher mode {mode!r}")

    @classmethod
    def independent(cls, obs_dim, low, high, rng, hidden=(64, 64), layer_norm=True,
                    init_log_std=None, log_std_bounds=LOG_STD_BOUNDS, mean_activation="tanh",
                    final_scale=3e-3):
        low, high = _bounds(low, high)
        act_dim = low.shape[0]
        sizes = (obs_dim, *hidden, act_dim)
        mean_net = init_mlp(sizes, rng, mean_activation, layer_norm, final_scale)
        log_std_net = init_mlp(sizes, rng, "linear", layer_norm, final_scale)
        if init_log_std is None:
            init_log_std = default_log_std(low, high)
        log_std_net.biases[-1][:] += init_log_std
        return cls("independent", low, high, mean_net=mean_net, log_std_net=log_std_net,
                   log_std_bounds=log_std_bounds, mean_activation=mean_activation)

    @classmethod
    def adaptive_variance(cls, actor, init_log_std=None, log_std_bounds=LOG_STD_BOUNDS):
        return cls("adaptive_variance", actor.low, actor.high, actor=actor, log_std=init_log_std,
                   log_std_bounds=log_std_bounds)

    @property
    def obs_dim(self):
        return self.mean_net.layer_sizes[0] if self.actor is None else self.actor.obs_dim

    @property
    def action_dim(self):
        return self.low.shape[0]

    def distribution(self, states):
        """Returns (mean, log_std, cache); rows of ``states`` are independent."""
        states = np.asarray(states, dtype=np.float64)
        lo, hi = self.log_std_bounds
        if self.mode == "independent":
            out, mean_cache = mlp_forward(self.mean_net, states)
            mean = self.center + self.half_range * out if self.mean_activation == "tanh" else out
            raw, std_cache = mlp_forward(self.log_std_net, states)
            log_std = np.clip(raw, lo, hi)
            inside = (raw >= lo) & (raw <= hi)
            return mean, log_std, (mean_cache, std_cache, inside)
        mean = self.actor.act(states)
        log_std = np.broadcast_to(np.clip(self.flat, lo, hi), mean.shape)
        return mean, log_std, None

    def sample(self, obs, rng):
        """Draw ``a ~ N(mean, sigma^2)``; returns (clipped executed action, raw draw)."""
        mean, log_std, _ = self.distribution(obs)
        pre_clip = mean + np.exp(log_std) * rng.standard_normal(np.shape(mean))
        return np.clip(pre_clip, self.low, self.high), pre_clip

    def reset(self):
        pass

    def log_prob(self, states, actions):
        """Gaussian log-density of the unclipped ``actions``, summed over action dims."""
        mean, log_std, _ = self.distribution(states)
        z = (np.asarray(actions, dtype=np.float64) - mean) * np.exp(-log_std)
        return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)

    def log_prob_grad(self, states, actions):
        """Gradient of ``sum(log_prob(states, actions))`` w.r.t. ``self.flat``."""
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        mean, log_std, cache = self.distribution(states)
        inv_var = np.exp(-2.0 * log_std)
        diff = actions - mean
        d_mean = diff * inv_var
        d_log_std = diff * diff * inv_var - 1.0
        if self.mode == "independent":
            mean_cache, std_cache, inside = cache
            if self.mean_activation == "tanh":
                d_mean = d_mean * self.half_range
            g_mean, _ = mlp_backward(self.mean_net, mean_cache, d_mean)
            g_std, _ = mlp_backward(self.log_std_net, std_cache, d_log_std * inside)
            flat = np.concatenate([g_mean.flat, g_std.flat])
        else:
            lo, hi = self.log_std_bounds
            inside = (self.flat >= lo) & (self.flat <= hi)
            summed = d_log_std if d_log_std.ndim == 1 else d_log_std.sum(axis=0)
            flat = summed * inside
        if not np.all(np.isfinite(flat)):
            raise NonFiniteGradientError("non-finite log-probability gradient")
        return GradientBundle(None, flat)

    def clamp_(self):
        """Project state-independent log-std parameters into the bounds.

        State-dependent log-std outputs are clipped at evaluation instead.
        """
        if self.mode == "adaptive_variance":
            np.clip(self.flat, *self.log_std_bounds, out=self.flat)

    def mean_log_std(self, states):
        return float(np.mean(self.distribution(states)[1]))

    def copy(self, actor=None):
        if self.mode == "independent":
            return GaussianPolicy("independent", self.low, self.high, mean_net=self.mean_net.copy(),
                                  log_std_net=self.log_std_net.copy(), log_std_bounds=self.log_std_bounds,
                                  mean_activation=self.mean_activation)
        return GaussianPolicy("adaptive_variance", self.low, self.high, actor=actor or self.actor,
                              log_std=self.flat.copy(), log_std_bounds=self.log_std_bounds)


@dataclass
class OuNoise:
    """Ornstein-Uhlenbeck noise, Euler-Maruyama discretized."""

    action_dim: int
    theta_ou: float = 0.15
    sigma_ou: float = 0.2
    dt: float = 1.0
    mu_ou: np.ndarray | float = 0.0
    x: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mu_ou = np.broadcast_to(np.asarray(self.mu_ou, dtype=np.float64), (self.action_dim,)).copy()
        if self.x is None:
            self.x = self.mu_ou.copy()
        else:
            self.x = np.asarray(self.x, dtype=np.float64).copy()

    def step(self, rng):
        xi = rng.standard_normal(self.action_dim)
        self.x = self.x + self.theta_ou * (self.mu_ou - self.x) * self.dt + self.sigma_ou * np.sqrt(self.dt) * xi
        return self.x.copy()

    def reset(self):
        self.x = self.mu_ou.copy()

    def copy(self):
        return OuNoise(self.action_dim, self.theta_ou, self.sigma_ou, self.dt, self.mu_ou.copy(), self.x.copy())


def ou_step(state: OuNoise, rng):
    """Functional form: returns (noise, new state) and leaves ``state`` untouched."""
    new = state.copy()
    return new.step(rng), new


@dataclass
class GaussianNoise:
    action_dim: int
    sigma: float = 0.2

    def step(self, rng):
        return self.sigma * rng.standard_normal(self.action_dim)

    def reset(self):
        pass


class NoisyActor:
    """Actor plus additive noise in normalized action units, clipped to the bounds."""

    def __init__(self, actor: DeterministicActor, noise, tag=None):
        self.actor = actor
        self.noise = noise
        self.tag = tag or f"actor+{type(noise).__name__}"

    def sample(self, obs, rng):
        a = self.actor.act(obs) + self.actor.half_range * self.noise.step(rng)
        return np.clip(a, self.actor.low, self.actor.high), None

    def reset(self):
        self.noise.reset()
