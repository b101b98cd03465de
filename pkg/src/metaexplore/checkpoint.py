"""Text checkpoints: versioned JSON with row-major nested arrays.

JSON floats are written with ``repr`` precision, so a load reproduces every
parameter exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .ddpg import Critic, Learner, TargetPair
from .nn import AdamState, ConfigurationError, MlpParams
from .policies import DeterministicActor, GaussianPolicy

FORMAT = "metaexplore-checkpoint/1"


def mlp_to_dict(params: MlpParams):
    return {
        "layer_sizes": list(params.layer_sizes),
        "output_activation": params.output_activation,
        "layer_norm": params.layer_norm,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "layernorm_gains": [g.tolist() for g in params.layernorm_gains],
        "layernorm_shifts": [s.tolist() for s in params.layernorm_shifts],
    }


def mlp_from_dict(d) -> MlpParams:
    params = MlpParams(d["layer_sizes"], d["output_activation"], d["layer_norm"])
    groups = (("weights", params.weights), ("biases", params.biases),
              ("layernorm_gains", params.layernorm_gains), ("layernorm_shifts", params.layernorm_shifts))
    for key, views in groups:
        if len(d[key]) != len(views):
            raise ConfigurationError(f"checkpoint has {len(d[key])} {key}, expected {len(views)}")
        for view, values in zip(views, d[key]):
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != view.shape:
                raise ConfigurationError(f"checkpoint {key} shape {arr.shape} != {view.shape}")
            view[:] = arr
    return params


def adam_to_dict(state: AdamState):
    return {
        "step_count": state.step_count,
        "learning_rate": state.learning_rate,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "epsilon": state.epsilon,
        "first_moment": state.first_moment.tolist(),
        "second_moment": state.second_moment.tolist(),
    }


def adam_from_dict(d) -> AdamState:
    return AdamState(np.asarray(d["first_moment"], dtype=np.float64), np.asarray(d["second_moment"], dtype=np.float64),
                     d["learning_rate"], d["beta1"], d["beta2"], d["epsilon"], d["step_count"])


def _actor_to_dict(actor):
    return {"net": mlp_to_dict(actor.net), "low": actor.low.tolist(), "high": actor.high.tolist()}


def _actor_from_dict(d):
    return DeterministicActor(mlp_from_dict(d["net"]), d["low"], d["high"])


def learner_to_dict(learner: Learner):
    return {
        "actor": _actor_to_dict(learner.actor),
        "critic": {"net": mlp_to_dict(learner.critic.net), "obs_dim": learner.critic.obs_dim},
        "target_actor": _actor_to_dict(learner.targets.target_actor),
        "target_critic": {"net": mlp_to_dict(learner.targets.target_critic.net),
                          "obs_dim": learner.targets.target_critic.obs_dim},
        "tau": learner.targets.tau,
        "gamma": learner.gamma,
        "clip_norm": learner.clip_norm,
        "actor_opt": adam_to_dict(learner.actor_opt),
        "critic_opt": adam_to_dict(learner.critic_opt),
    }


def learner_from_dict(d) -> Learner:
    actor = _actor_from_dict(d["actor"])
    critic = Critic(mlp_from_dict(d["critic"]["net"]), d["critic"]["obs_dim"])
    targets = TargetPair(_actor_from_dict(d["target_actor"]),
                         Critic(mlp_from_dict(d["target_critic"]["net"]), d["target_critic"]["obs_dim"]), d["tau"])
    return Learner(actor, critic, targets, adam_from_dict(d["actor_opt"]), adam_from_dict(d["critic_opt"]),
                   d["gamma"], d["clip_norm"])


def teacher_to_dict(teacher: GaussianPolicy, opt: AdamState | None = None):
    d = {
        "mode": teacher.mode,
        "low": teacher.low.tolist(),
        "high": teacher.high.tolist(),
        "log_std_bounds": list(teacher.log_std_bounds),
    }
    if teacher.mode == "independent":
        d["mean_net"] = mlp_to_dict(teacher.mean_net)
        d["log_std_net"] = mlp_to_dict(teacher.log_std_net)
        d["mean_activation"] = teacher.mean_activation
    else:
        d["log_std"] = teacher.flat.tolist()
    if opt is not None:
        d["opt"] = adam_to_dict(opt)
    return d


def teacher_from_dict(d, actor=None):
    if d["mode"] == "independent":
        teacher = GaussianPolicy("independent", d["low"], d["high"], mean_net=mlp_from_dict(d["mean_net"]),
                                 log_std_net=mlp_from_dict(d["log_std_net"]), log_std_bounds=d["log_std_bounds"],
                                 mean_activation=d["mean_activation"])
    else:
        if actor is None:
            raise ConfigurationError("an adaptive-variance teacher needs the actor it wraps")
        teacher = GaussianPolicy("adaptive_variance", d["low"], d["high"], actor=actor, log_std=d["log_std"],
                                 log_std_bounds=d["log_std_bounds"])
    opt = adam_from_dict(d["opt"]) if "opt" in d else None
    return teacher, opt


def save_checkpoint(path, learner: Learner, config=None, teacher=None, teacher_opt=None, extra=None):
    doc = {"format": FORMAT, "learner": learner_to_dict(learner)}
    if config is not None:
        doc["config"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in config.to_dict().items()}
    if teacher is not None:
        doc["teacher"] = teacher_to_dict(teacher, teacher_opt)
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Returns a dict with ``learner`` and, when stored, ``config``, ``teacher``, ``teacher_opt``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ConfigurationError(f"unsupported checkpoint format {doc.get('format')!r}")
    out = {"learner": learner_from_dict(doc["learner"]), "extra": doc.get("extra", {})}
    if "config" in doc:
        from .config import ExperimentConfig

        cfg = dict(doc["config"])
        cfg["seeds"] = tuple(cfg["seeds"])
        cfg["hidden"] = tuple(cfg["hidden"])
        out["config"] = ExperimentConfig(**cfg)
    if "teacher" in doc:
        out["teacher"], out["teacher_opt"] = teacher_from_dict(doc["teacher"], out["learner"].actor)
    return out
