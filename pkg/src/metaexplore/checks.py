"""Numerical self-checks: analytic gradients against central differences, and
the REINFORCE meta-gradient against a closed-form bandit gradient.

Used by ``metaexplore selftest`` and by the test-suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ddpg import Critic, Trajectory, actor_objective_grad
from .nn import MlpParams, init_mlp, mlp_backward, mlp_forward
from .policies import DeterministicActor, GaussianPolicy
from .teacher import teacher_gradient

FD_STEP = 1e-5
REL_TOL = 1e-4
# below this magnitude both sides count as zero; FD round-off is ~1e-11 at FD_STEP
ZERO_FLOOR = 1e-8


def central_difference(f, flat, indices=None, h=FD_STEP):
    """d f / d flat[i] for each i in ``indices``, perturbing ``flat`` in place."""
    if indices is None:
        indices = range(flat.shape[0])
    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        out.append((f_plus - f_minus) / (2.0 * h))
    return np.array(out)


def relative_error(analytic, numeric, floor=ZERO_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@dataclass
class CheckResult:
    name: str
    n_draws: int
    worst: float
    tolerance: float
    seconds: float

    @property
    def passed(self):
        return bool(self.worst <= self.tolerance)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst={self.worst:.3g} tol={self.tolerance:g} draws={self.n_draws} ({self.seconds:.1f}s)"


def _pick(rng, n, k):
    return np.arange(n) if k is None or k >= n else rng.choice(n, size=k, replace=False)


def _random_net(rng, sizes, output_activation):
    net = init_mlp(sizes, rng, output_activation, True, final_scale=None)
    net.flat += 0.1 * rng.standard_normal(net.flat.shape)
    return net


ARCHITECTURES = {
    "actor": ((3, 64, 64, 1), "tanh"),
    "critic": ((4, 64, 64, 1), "linear"),
    "teacher_mean": ((3, 64, 64, 1), "tanh"),
    "teacher_log_std": ((3, 64, 64, 1), "linear"),
}


def mlp_gradient_errors(rng, sizes, output_activation, coords=None):
    """Worst relative error over sampled parameter coordinates and every input coordinate."""
    net = _random_net(rng, sizes, output_activation)
    x = rng.standard_normal(sizes[0])
    c = rng.standard_normal(sizes[-1])
    out, cache = mlp_forward(net, x)
    grads, d_x = mlp_backward(net, cache, c)
    idx = _pick(rng, net.flat.shape[0], coords)
    f = lambda: float(mlp_forward(net, x)[0] @ c)
    err = relative_error(grads.flat[idx], central_difference(f, net.flat, idx)).max()
    x_err = relative_error(d_x, central_difference(f, x)).max()
    return max(err, x_err)


def check_mlp_gradients(rng, n_draws=100, coords=40):
    start = time.perf_counter()
    worst = 0.0
    for sizes, act in ARCHITECTURES.values():
        for _ in range(n_draws):
            worst = max(worst, mlp_gradient_errors(rng, sizes, act, coords))
    return CheckResult("mlp+layernorm backprop", n_draws * len(ARCHITECTURES), worst, REL_TOL,
                       time.perf_counter() - start)


def _random_teacher(rng, mode, obs_dim=3, act_dim=2, hidden=(16, 16)):
    low, high = -2.0 * np.ones(act_dim), 2.0 * np.ones(act_dim)
    if mode == "independent":
        teacher = GaussianPolicy.independent(obs_dim, low, high, rng, hidden, final_scale=None)
        teacher.flat += 0.1 * rng.standard_normal(teacher.flat.shape)
        return teacher
    actor = DeterministicActor(_random_net(rng, (obs_dim, *hidden, act_dim), "tanh"), low, high)
    return GaussianPolicy.adaptive_variance(actor, rng.uniform(-1.5, 0.5, size=act_dim))


def log_prob_gradient_errors(rng, mode, n_states=4, coords=40):
    teacher = _random_teacher(rng, mode)
    states = rng.standard_normal((n_states, teacher.obs_dim))
    mean, log_std, _ = teacher.distribution(states)
    actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape) * 1.5
    grad = teacher.log_prob_grad(states, actions).flat
    idx = _pick(rng, teacher.flat.shape[0], coords)
    f = lambda: float(teacher.log_prob(states, actions).sum())
    return relative_error(grad[idx], central_difference(f, teacher.flat, idx)).max()


def check_log_prob_gradients(rng, n_draws=100, coords=40):
    start = time.perf_counter()
    worst = 0.0
    for mode in ("independent", "adaptive_variance"):
        for _ in range(n_draws):
            worst = max(worst, log_prob_gradient_errors(rng, mode, coords=coords))
    return CheckResult("gaussian log-prob gradient", 2 * n_draws, worst, REL_TOL, time.perf_counter() - start)


def actor_objective_errors(rng, obs_dim=3, act_dim=1, batch=8, coords=40):
    low, high = -2.0 * np.ones(act_dim), 2.0 * np.ones(act_dim)
    actor = DeterministicActor(_random_net(rng, (obs_dim, 64, 64, act_dim), "tanh"), low, high)
    critic = Critic(_random_net(rng, (obs_dim + act_dim, 64, 64, 1), "linear"), obs_dim)
    states = rng.standard_normal((batch, obs_dim))
    _, grads = actor_objective_grad(actor, critic, states)
    idx = _pick(rng, actor.net.flat.shape[0], coords)
    f = lambda: float(np.mean(critic.value(states, actor.act(states))))
    return relative_error(grads.flat[idx], central_difference(f, actor.net.flat, idx)).max()


def check_actor_objective_gradients(rng, n_draws=100, coords=40):
    start = time.perf_counter()
    worst = max(actor_objective_errors(rng, coords=coords) for _ in range(n_draws))
    return CheckResult("actor objective gradient", n_draws, worst, REL_TOL, time.perf_counter() - start)


def bandit_teacher(mean_w=0.3, mean_b=0.2, log_std_w=-0.4, log_std_b=-0.3, bound=50.0):
    """1-D Gaussian bandit teacher: mean and log-std both affine in a scalar state."""
    mean_net = MlpParams((1, 1), "linear", False)
    log_std_net = MlpParams((1, 1), "linear", False)
    mean_net.flat[:] = (mean_w, mean_b)
    log_std_net.flat[:] = (log_std_w, log_std_b)
    return GaussianPolicy("independent", [-bound], [bound], mean_net=mean_net, log_std_net=log_std_net,
                          log_std_bounds=(-5.0, 2.0), mean_activation="linear")


def bandit_analytic_gradient(teacher, state):
    """Gradient of E[-a^2] = -(mu^2 + sigma^2) w.r.t. the four bandit parameters."""
    w_m, b_m, w_s, b_s = teacher.flat
    mu = w_m * state + b_m
    var = np.exp(2.0 * (w_s * state + b_s))
    return np.array([-2.0 * mu * state, -2.0 * mu, -2.0 * var * state, -2.0 * var])


def one_step_trajectory(state, executed, pre_clip, reward):
    s = np.atleast_2d(np.asarray(state, dtype=np.float64))
    return Trajectory(s, np.atleast_2d(executed), np.array([reward]), s.copy(), np.array([True]),
                      np.array([True]), np.array([True]), np.atleast_2d(pre_clip), "teacher")


def bandit_meta_gradient_samples(rng, n_samples, state=0.7):
    """Per-draw REINFORCE estimates with meta-reward ``-a^2`` on a one-step bandit."""
    teacher = bandit_teacher()
    s = np.array([state])
    samples = np.empty((n_samples, teacher.flat.shape[0]))
    for i in range(n_samples):
        executed, pre = teacher.sample(s, rng)
        reward = -float(executed[0]) ** 2
        grad, _ = teacher_gradient(teacher, one_step_trajectory(s, executed, pre, reward), reward)
        samples[i] = grad.flat
    return samples, bandit_analytic_gradient(teacher, state)


def check_meta_gradient_bandit(rng, n_samples=100_000):
    """Worst |mean - analytic| / standard error over coordinates; must stay <= 3."""
    start = time.perf_counter()
    samples, exact = bandit_meta_gradient_samples(rng, n_samples)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n_samples)
    z = np.abs(samples.mean(axis=0) - exact) / se
    return CheckResult("meta-gradient bandit (z-score)", n_samples, float(z.max()), 3.0, time.perf_counter() - start)


def subsample_unbiasedness(rng, n_estimates=10_000, rate=0.25, length=40):
    """z-scores of the mean sub-sampled meta-gradient against the full sum on a fixed rollout."""
    teacher = bandit_teacher()
    states = rng.uniform(-1.0, 1.0, size=(length, 1))
    mean, log_std, _ = teacher.distribution(states)
    pre = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    traj = Trajectory(states, pre.copy(), np.zeros(length), states.copy(), np.zeros(length, dtype=bool),
                      np.r_[True, np.zeros(length - 1, dtype=bool)], np.r_[np.zeros(length - 1, dtype=bool), True],
                      pre, "teacher")
    full, _ = teacher_gradient(teacher, traj, 1.0)
    est = np.array([teacher_gradient(teacher, traj, 1.0, rate, rng)[0].flat for _ in range(n_estimates)])
    se = est.std(axis=0, ddof=1) / np.sqrt(n_estimates)
    return np.abs(est.mean(axis=0) - full.flat) / se


def check_subsample_unbiased(rng, n_estimates=10_000, rate=0.25):
    start = time.perf_counter()
    z = subsample_unbiasedness(rng, n_estimates, rate)
    return CheckResult(f"sub-sampled meta-gradient at rate {rate} (z-score)", n_estimates, float(z.max()), 3.0,
                       time.perf_counter() - start)


def run_selftest(seed=0, n_draws=100, n_bandit=100_000):
    rng = np.random.default_rng(seed)
    return [
        check_mlp_gradients(rng, n_draws),
        check_log_prob_gradients(rng, n_draws),
        check_actor_objective_gradients(rng, n_draws),
        check_meta_gradient_bandit(rng, n_bandit),
        check_subsample_unbiased(rng),
    ]
