"""Training loops: the teacher-student meta loop and the plain DDPG baseline.

Seeding: the master seed feeds ``numpy.random.SeedSequence(seed)``, whose
children are, in order,

    0  init      network initialization
    1  explore   environment generating training / teacher rollouts
    2  eval      environment generating evaluation rollouts
    3  sampling  action noise and teacher draws (and meta sub-sampling)
    4  buffer    minibatch indices for every DDPG update

so changing one source of randomness leaves the others intact.

Step accounting: ``env_steps`` counts every environment step whose data
reaches a learner. In the meta loop that is all of D0 and D1. The baseline's
per-cycle evaluation rollouts are measurement only, never stored, and are
counted separately in ``eval_env_steps``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .ddpg import Learner, ReplayBuffer, Trajectory, ddpg_update
from .envs import make_env
from .nn import AdamState
from .policies import GaussianNoise, GaussianPolicy, NoisyActor, OuNoise, default_log_std
from .rollout import RolloutWorker
from .teacher import MetaRewardShaper, estimate_return, meta_reward, teacher_gradient, teacher_update

log = logging.getLogger(__name__)

STREAMS = ("init", "explore", "eval", "sampling", "buffer")


class RunAborted(RuntimeError):
    def __init__(self, cycle, cause):
        super().__init__(f"run aborted at cycle {cycle}: {cause}")
        self.cycle = cycle
        self.cause = cause


def make_streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


@dataclass
class MetricsRecord:
    cycle: int
    epoch: int
    env_steps: int
    eval_env_steps: int
    return_pi: float = math.nan
    return_pi_prime: float = math.nan
    meta_reward: float = math.nan
    eval_return: float = math.nan
    eval_episodes: int = 0
    eval_goal_rate: float = math.nan
    teacher_grad_norm: float = math.nan
    teacher_log_std: float = math.nan
    critic_loss: float = math.nan
    actor_objective: float = math.nan
    buffer_size: int = 0
    wall_clock: float = field(default=math.nan, compare=False)


# wall_clock is excluded so the CSV is a pure function of (config, seed)
METRICS_COLUMNS = [f.name for f in dataclasses.fields(MetricsRecord) if f.name != "wall_clock"]


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for rec in records:
        writer.writerow([_fmt(getattr(rec, c)) for c in METRICS_COLUMNS])
    return buf.getvalue()


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) for k, v in row.items()} for row in rows]


@dataclass
class RunResult:
    config: ExperimentConfig
    seed: int
    metrics: list
    learner: Learner
    teacher: GaussianPolicy | None = None
    teacher_opt: AdamState | None = None
    visitation: dict = field(default_factory=dict)

    def final_return(self, n=10):
        values = [r.eval_return for r in self.metrics[1:]][-n:]
        return float(np.mean(values)) if values else math.nan

    def final_goal_rate(self, n=10):
        values = [r.eval_goal_rate for r in self.metrics[1:]][-n:]
        return float(np.mean(values)) if values else math.nan

    def steps_to_reach(self, threshold):
        """First ``env_steps`` at which the evaluation return reached ``threshold`` (inf if never)."""
        for rec in self.metrics:
            if rec.eval_return >= threshold:
                return rec.env_steps
        return math.inf


def _build_learner(config, spec, rng):
    return Learner.create(spec.obs_dim, spec.action_low, spec.action_high, rng, hidden=config.hidden,
                          layer_norm=config.layer_norm, actor_lr=config.actor_lr, critic_lr=config.critic_lr,
                          gamma=config.gamma, tau=config.tau, clip_norm=config.clip_norm,
                          final_scale=config.final_init_scale)


def _build_teacher(config, spec, learner, rng):
    init_log_std = default_log_std(spec.action_low, spec.action_high, config.init_log_std_fraction)
    bounds = (config.log_std_min, config.log_std_max)
    if config.algorithm == "meta_independent":
        return GaussianPolicy.independent(spec.obs_dim, spec.action_low, spec.action_high, rng, config.hidden,
                                          config.layer_norm, init_log_std, bounds, config.teacher_mean_activation,
                                          config.final_init_scale)
    return GaussianPolicy.adaptive_variance(learner.actor, init_log_std, bounds)


def _eval_stats(traj: Trajectory, config):
    estimate = estimate_return(traj, config.gamma if config.discounted_eval else None, allow_truncated=True)
    n_complete = sum(1 for _, _, complete in traj.episodes() if complete)
    goal = traj.n_goal() / n_complete if n_complete else 0.0
    return estimate, goal


def _record_visits(store, key, traj):
    store.setdefault(key, []).append(traj.states.copy())


def run_meta_training(config: ExperimentConfig, seed: int, callback=None) -> RunResult:
    """Teacher-student loop: explore with the teacher, score its data by a
    lookahead update of the student, update the teacher by the meta-policy
    gradient, then train the student on everything collected."""
    if not config.is_meta:
        raise ValueError(f"{config.algorithm} is not a meta algorithm")
    rngs = make_streams(seed)
    explore_env = make_env(config.env, rngs["explore"], **config.env_constants)
    eval_env = make_env(config.env, rngs["eval"], **config.env_constants)
    spec = explore_env.spec
    explorer = RolloutWorker(explore_env, persistent=config.persistent_exploration)
    evaluator = RolloutWorker(eval_env)
    learner = _build_learner(config, spec, rngs["init"])
    teacher = _build_teacher(config, spec, learner, rngs["init"])
    teacher_opt = AdamState.for_params(teacher, config.meta_lr)
    shaper = MetaRewardShaper(config.meta_baseline, config.meta_normalize)
    buffer = ReplayBuffer(config.buffer_capacity, spec.obs_dim, spec.action_dim)
    visits = {}
    start = time.perf_counter()

    d1 = evaluator.collect(learner.actor, rngs["sampling"], n_steps=config.evaluation_steps)
    env_steps = len(d1)
    r_pi, goal = _eval_stats(d1, config)
    buffer.extend(d1)
    metrics = [MetricsRecord(0, 0, env_steps, 0, return_pi=r_pi.value, eval_return=r_pi.value,
                             eval_episodes=r_pi.n_episodes, eval_goal_rate=goal, buffer_size=len(buffer),
                             wall_clock=time.perf_counter() - start)]
    if callback:
        callback(metrics[-1])

    cycle = 0
    while config.epoch_cycles > 0 and env_steps < config.total_steps:
        cycle += 1
        try:
            d0 = explorer.collect(teacher, rngs["sampling"], n_steps=config.exploration_rollout_steps)
            env_steps += len(d0)
            log_std = teacher.mean_log_std(d0.states)

            lookahead = learner.copy()
            ddpg_update(lookahead, d0, config.lookahead_train_steps, config.batch_size, rngs["buffer"])
            d1 = evaluator.collect(lookahead.actor, rngs["sampling"], n_steps=config.evaluation_steps)
            env_steps += len(d1)
            r_new, goal = _eval_stats(d1, config)
            mr = meta_reward(r_new, r_pi)

            signal = shaper(mr.value)
            grad_norm = 0.0
            for _ in range(config.exploration_train_steps):
                grad, _ = teacher_gradient(teacher, d0, signal, config.subsample_rate, rngs["sampling"])
                grad_norm = grad.norm()
                teacher_update(teacher, grad, teacher_opt, config.clip_norm)

            buffer.extend(d0)
            buffer.extend(d1)
            stats = ddpg_update(learner, buffer, config.train_steps, config.batch_size, rngs["buffer"])

            if config.fresh_eval_after_buffer_update:
                d_fresh = evaluator.collect(learner.actor, rngs["sampling"], n_steps=config.evaluation_steps)
                env_steps += len(d_fresh)
                buffer.extend(d_fresh)
                r_pi, _ = _eval_stats(d_fresh, config)
            else:
                r_pi = r_new
        except Exception as exc:
            raise RunAborted(cycle, exc) from exc

        if config.log_visitation:
            _record_visits(visits, "teacher", d0)
            _record_visits(visits, "student", d1)
        metrics.append(MetricsRecord(
            cycle, (cycle - 1) // config.epoch_cycles, env_steps, 0,
            return_pi=mr.old.value, return_pi_prime=r_new.value, meta_reward=mr.value,
            eval_return=r_new.value, eval_episodes=r_new.n_episodes, eval_goal_rate=goal,
            teacher_grad_norm=grad_norm, teacher_log_std=log_std, critic_loss=stats.critic_loss,
            actor_objective=stats.actor_objective, buffer_size=len(buffer),
            wall_clock=time.perf_counter() - start,
        ))
        if callback:
            callback(metrics[-1])
    return RunResult(config, seed, metrics, learner, teacher, teacher_opt, visits)


def run_ddpg_baseline(config: ExperimentConfig, seed: int, callback=None) -> RunResult:
    """DDPG with additive Gaussian or OU exploration, evaluated every cycle."""
    if config.algorithm not in ("ddpg_gaussian", "ddpg_ou"):
        raise ValueError(f"{config.algorithm} is not a baseline algorithm")
    rngs = make_streams(seed)
    explore_env = make_env(config.env, rngs["explore"], **config.env_constants)
    eval_env = make_env(config.env, rngs["eval"], **config.env_constants)
    spec = explore_env.spec
    explorer = RolloutWorker(explore_env, persistent=config.persistent_exploration)
    evaluator = RolloutWorker(eval_env)
    learner = _build_learner(config, spec, rngs["init"])
    if config.algorithm == "ddpg_gaussian":
        noise = GaussianNoise(spec.action_dim, config.noise_scale)
    else:
        noise = OuNoise(spec.action_dim, config.ou_theta, config.ou_sigma, config.ou_dt)
    behavior = NoisyActor(learner.actor, noise, tag=config.algorithm)
    buffer = ReplayBuffer(config.buffer_capacity, spec.obs_dim, spec.action_dim)
    visits = {}
    start = time.perf_counter()

    d_eval = evaluator.collect(learner.actor, rngs["sampling"], n_steps=config.evaluation_steps)
    eval_steps = len(d_eval)
    r_eval, goal = _eval_stats(d_eval, config)
    metrics = [MetricsRecord(0, 0, 0, eval_steps, eval_return=r_eval.value, eval_episodes=r_eval.n_episodes,
                             eval_goal_rate=goal, wall_clock=time.perf_counter() - start)]
    if callback:
        callback(metrics[-1])

    env_steps = 0
    cycle = 0
    while config.epoch_cycles > 0 and env_steps < config.total_steps:
        cycle += 1
        try:
            d = explorer.collect(behavior, rngs["sampling"], n_steps=config.rollout_steps)
            env_steps += len(d)
            buffer.extend(d)
            stats = ddpg_update(learner, buffer, config.train_steps, config.batch_size, rngs["buffer"])
            d_eval = evaluator.collect(learner.actor, rngs["sampling"], n_steps=config.evaluation_steps)
            eval_steps += len(d_eval)
            r_eval, goal = _eval_stats(d_eval, config)
        except Exception as exc:
            raise RunAborted(cycle, exc) from exc
        if config.log_visitation:
            _record_visits(visits, "behavior", d)
            _record_visits(visits, "student", d_eval)
        metrics.append(MetricsRecord(
            cycle, (cycle - 1) // config.epoch_cycles, env_steps, eval_steps,
            eval_return=r_eval.value, eval_episodes=r_eval.n_episodes, eval_goal_rate=goal,
            critic_loss=stats.critic_loss, actor_objective=stats.actor_objective, buffer_size=len(buffer),
            wall_clock=time.perf_counter() - start,
        ))
        if callback:
            callback(metrics[-1])
    return RunResult(config, seed, metrics, learner, visitation=visits)


def run(config: ExperimentConfig, seed: int, callback=None) -> RunResult:
    if config.is_meta:
        return run_meta_training(config, seed, callback)
    return run_ddpg_baseline(config, seed, callback)


def write_run(result: RunResult, out_dir):
    """Write metrics.csv, metrics.jsonl, config.ini and checkpoint.final into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        fh.write(metrics_csv(result.metrics))
    with open(os.path.join(out_dir, "metrics.jsonl"), "w") as fh:
        for rec in result.metrics:
            fh.write(json.dumps(dataclasses.asdict(rec)) + "\n")
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(result.config.replace(seeds=(result.seed,)).to_text())
    save_checkpoint(os.path.join(out_dir, "checkpoint.final"), result.learner, result.config.replace(seeds=(result.seed,)),
                    result.teacher, result.teacher_opt, extra={"seed": result.seed})
    if result.visitation:
        np.savez(os.path.join(out_dir, "visitation.npz"),
                 **{k: np.concatenate(v) for k, v in result.visitation.items()})
