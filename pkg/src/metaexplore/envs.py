"""Built-in continuous-control environments.

Pendulum
    Swing-up with the public Pendulum-v0 dynamics. State (theta, theta_dot)
    with theta = 0 upright. Per step, with u clipped to [-2, 2]:

        cost = norm(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2
        theta_dot' = theta_dot + (-3 g / (2 l) sin(theta + pi) + 3 u / (m l^2)) dt
        theta'     = theta + theta_dot' dt
        theta_dot' = clip(theta_dot', -8, 8)

    g = 10, m = 1, l = 1, dt = 0.05, reward = -cost, norm() wraps to
    [-pi, pi). Observation (cos theta, sin theta, theta_dot). Reset draws
    theta ~ U(-pi, pi), theta_dot ~ U(-1, 1). Episodes are cut at 200 steps;
    the cut is a time limit, never a terminal state.

PointMass
    Velocity-controlled point in the square [-1, 1]^2: p' = clip(p + dt a)
    with a in [-1, 1]^2 and dt = 0.1. Reward +1 and termination on entering
    the goal disc (radius 0.1, centred at (0.9, 0.9)), 0 otherwise. Reset
    draws p uniformly from the arena outside the goal. 100-step time limit.

DoubleIntegrator
    x' = x + dt v, v' = v + dt u (explicit Euler, dt = 0.1), u in [-1, 1],
    reward -(x^2 + 0.1 v^2 + 0.1 u^2). Reset x ~ U(-1, 1), v ~ U(-0.5, 0.5).
    200-step time limit. Position and velocity are clipped to [-2, 2] so a
    bad policy cannot run the quadratic cost off to huge values; the LQR
    controller started from the reset box never reaches those walls, so on
    its trajectories the system is exactly linear-quadratic and the LQR
    solution is the reference optimum.

TwoStateChain
    Two discrete states observed one-hot, action a in [-1, 1], reward
    b[s] - (a - c[s])^2, then the state flips with probability p_switch
    (otherwise stays). A toy MDP whose optimal Q-function follows from value
    iteration. 50-step time limit.

All stochasticity comes from the environment's own generator: reset draws
for the physical envs, reset and transitions for the chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .nn import ConfigurationError


class EnvError(RuntimeError):
    """Illegal use of an environment (e.g. stepping a finished episode)."""


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    max_episode_steps: int
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.obs_dim <= 0 or self.action_dim <= 0 or self.max_episode_steps <= 0:
            raise ConfigurationError("environment dimensions must be positive")
        if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ConfigurationError("action bounds need low < high")


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    terminal: bool


def angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


class Env:
    name = ""
    defaults: dict = {}

    def __init__(self, rng=None, **constants):
        unknown = set(constants) - set(self.defaults)
        if unknown:
            raise ConfigurationError(f"unknown {self.name} constants: {sorted(unknown)}")
        self.constants = {**self.defaults, **constants}
        self.rng = rng if rng is not None else np.random.default_rng()
        self.state = None
        self.steps = 0
        self.done = True
        self.spec = self._make_spec()

    def _make_spec(self) -> EnvSpec:
        raise NotImplementedError

    def reset(self, rng=None):
        """Start an episode; ``rng`` replaces the environment's generator if given."""
        if rng is not None:
            self.rng = rng
        self.state = self._initial_state()
        self.steps = 0
        self.done = False
        return self._observe()

    def step(self, action) -> StepResult:
        if self.done:
            raise EnvError("step() called on a finished episode; call reset() first")
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        reward, terminal = self._advance(action)
        self.steps += 1
        self.done = terminal or self.steps >= self.spec.max_episode_steps
        return StepResult(self._observe(), float(reward), self.done, terminal)

    def _initial_state(self):
        raise NotImplementedError

    def _advance(self, action):
        raise NotImplementedError

    def _observe(self):
        raise NotImplementedError


class Pendulum(Env):
    name = "pendulum"
    defaults = {"g": 10.0, "m": 1.0, "l": 1.0, "dt": 0.05, "max_speed": 8.0, "max_torque": 2.0,
                "max_episode_steps": 200}

    def _make_spec(self):
        c = self.constants
        return EnvSpec(self.name, 3, 1, (-c["max_torque"],), (c["max_torque"],),
                       int(c["max_episode_steps"]), dict(c))

    def _initial_state(self):
        return np.array([self.rng.uniform(-np.pi, np.pi), self.rng.uniform(-1.0, 1.0)])

    def _advance(self, action):
        c = self.constants
        th, thdot = self.state
        u = float(np.clip(action[0], -c["max_torque"], c["max_torque"]))
        cost = angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
        g, m, l, dt = c["g"], c["m"], c["l"], c["dt"]
        newthdot = thdot + (-3 * g / (2 * l) * np.sin(th + np.pi) + 3.0 / (m * l ** 2) * u) * dt
        newth = th + newthdot * dt
        newthdot = np.clip(newthdot, -c["max_speed"], c["max_speed"])
        self.state = np.array([newth, newthdot])
        return -cost, False

    def _observe(self):
        th, thdot = self.state
        return np.array([np.cos(th), np.sin(th), thdot])

    def energy(self):
        """Conserved quantity of the undamped, unforced continuous dynamics."""
        c = self.constants
        th, thdot = self.state
        return 0.5 * thdot ** 2 + 1.5 * c["g"] / c["l"] * np.cos(th)


class PointMass(Env):
    name = "point_mass"
    defaults = {"dt": 0.1, "goal_x": 0.9, "goal_y": 0.9, "goal_radius": 0.1, "max_episode_steps": 100}

    def _make_spec(self):
        return EnvSpec(self.name, 2, 2, (-1.0, -1.0), (1.0, 1.0),
                       int(self.constants["max_episode_steps"]), dict(self.constants))

    @property
    def goal(self):
        return np.array([self.constants["goal_x"], self.constants["goal_y"]])

    def in_goal(self, p):
        return float(np.linalg.norm(p - self.goal)) <= self.constants["goal_radius"]

    def _initial_state(self):
        while True:
            p = self.rng.uniform(-1.0, 1.0, size=2)
            if not self.in_goal(p):
                return p

    def _advance(self, action):
        a = np.clip(action, -1.0, 1.0)
        self.state = np.clip(self.state + self.constants["dt"] * a, -1.0, 1.0)
        reached = self.in_goal(self.state)
        return (1.0 if reached else 0.0), reached

    def _observe(self):
        return self.state.copy()


class DoubleIntegrator(Env):
    name = "double_integrator"
    defaults = {"dt": 0.1, "q_pos": 1.0, "q_vel": 0.1, "r_u": 0.1, "max_force": 1.0,
                "init_pos": 1.0, "init_vel": 0.5, "max_pos": 2.0, "max_vel": 2.0, "max_episode_steps": 200}

    def _make_spec(self):
        u = self.constants["max_force"]
        return EnvSpec(self.name, 2, 1, (-u,), (u,), int(self.constants["max_episode_steps"]),
                       dict(self.constants))

    def dynamics(self):
        """(A, B, Q, R) of the linear-quadratic model."""
        c = self.constants
        dt = c["dt"]
        A = np.array([[1.0, dt], [0.0, 1.0]])
        B = np.array([[0.0], [dt]])
        return A, B, np.diag([c["q_pos"], c["q_vel"]]), np.array([[c["r_u"]]])

    def _initial_state(self):
        c = self.constants
        return np.array([self.rng.uniform(-c["init_pos"], c["init_pos"]),
                         self.rng.uniform(-c["init_vel"], c["init_vel"])])

    def _advance(self, action):
        c = self.constants
        u = float(np.clip(action[0], -c["max_force"], c["max_force"]))
        x, v = self.state
        cost = c["q_pos"] * x * x + c["q_vel"] * v * v + c["r_u"] * u * u
        self.state = np.array([np.clip(x + c["dt"] * v, -c["max_pos"], c["max_pos"]),
                               np.clip(v + c["dt"] * u, -c["max_vel"], c["max_vel"])])
        return -cost, False

    def _observe(self):
        return self.state.copy()


class TwoStateChain(Env):
    name = "two_state"
    defaults = {"b0": 1.0, "b1": 0.5, "c0": 0.5, "c1": -0.5, "p_switch": 0.7, "max_episode_steps": 50}

    def _make_spec(self):
        return EnvSpec(self.name, 2, 1, (-1.0,), (1.0,), int(self.constants["max_episode_steps"]),
                       dict(self.constants))

    def reward(self, s, a):
        c = self.constants
        b, center = (c["b0"], c["c0"]) if s == 0 else (c["b1"], c["c1"])
        return b - (a - center) ** 2

    def _initial_state(self):
        return int(self.rng.integers(0, 2))

    def _advance(self, action):
        a = float(np.clip(action[0], -1.0, 1.0))
        r = self.reward(self.state, a)
        if self.rng.random() < self.constants["p_switch"]:
            self.state = 1 - self.state
        return r, False

    def _observe(self):
        obs = np.zeros(2)
        obs[self.state] = 1.0
        return obs


ENVIRONMENTS = {cls.name: cls for cls in (Pendulum, PointMass, DoubleIntegrator, TwoStateChain)}


def make_env(name, rng=None, **constants) -> Env:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(rng, **constants)
