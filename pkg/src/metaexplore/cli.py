"""Command line: ``metaexplore {train,eval,compare,selftest}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import report
from .checkpoint import load_checkpoint
from .checks import run_selftest
from .config import ALGORITHMS, ExperimentConfig, apply_overrides, load_config
from .envs import ENVIRONMENTS, make_env
from .harness import RunAborted, run, write_run
from .nn import ConfigurationError
from .rollout import RolloutWorker

log = logging.getLogger("metaexplore")


def build_parser():
    parser = argparse.ArgumentParser(prog="metaexplore", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one experiment per seed")
    train.add_argument("--config", help="flat key = value config file")
    train.add_argument("--algo", choices=ALGORITHMS)
    train.add_argument("--env", choices=sorted(ENVIRONMENTS))
    train.add_argument("--seed", type=int, action="append",
                       help="master seed (repeatable); defaults to the config's seeds")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    train.add_argument("--log-every", type=int, default=50, help="progress line every N cycles")

    ev = sub.add_parser("eval", help="roll out a checkpoint's deterministic actor")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=10)
    ev.add_argument("--seed", type=int, default=0)

    cmp_ = sub.add_parser("compare", help="aggregate metrics logs across seeds")
    cmp_.add_argument("paths", nargs="+", help="run directories or metrics.csv files; LABEL=PATH groups curves")
    cmp_.add_argument("--out", help="prefix for the .csv and .txt summaries")
    cmp_.add_argument("--plot", help="learning-curve figure to write (png, pdf, ...)")
    cmp_.add_argument("--value", default=report.SUMMARY_VALUE, help="metrics column to aggregate")
    cmp_.add_argument("--label", default="run", help="label for paths without LABEL=")
    cmp_.add_argument("--every", type=int, default=1, help="print every Nth row in the text table")

    st = sub.add_parser("selftest", help="gradient checks and meta-gradient unbiasedness")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--quick", action="store_true", help="fewer draws (smoke check only)")
    return parser


def _train(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    pairs = []
    if args.algo:
        pairs.append(("algorithm", args.algo))
    if args.env:
        pairs.append(("env", args.env))
    config = apply_overrides(config, pairs + list(args.overrides))
    seeds = args.seed or list(config.seeds)
    for seed in seeds:
        out_dir = args.out if len(seeds) == 1 else os.path.join(args.out, f"seed_{seed}")

        def progress(rec):
            if rec.cycle % args.log_every == 0:
                log.info("seed %d cycle %d steps %d eval_return %.1f", seed, rec.cycle, rec.env_steps, rec.eval_return)

        try:
            result = run(config, seed, progress)
        except RunAborted as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        write_run(result, out_dir)
        print(f"seed {seed}: final return {result.final_return():.2f} -> {out_dir}")
    return 0


def _eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    config = ckpt.get("config") or ExperimentConfig()
    env = make_env(config.env, np.random.default_rng(args.seed), **config.env_constants)
    traj = RolloutWorker(env).collect(ckpt["learner"].actor, np.random.default_rng(args.seed), n_episodes=args.episodes)
    returns = np.array(traj.episode_returns())
    print(f"episodes {len(returns)} mean_return {returns.mean():.3f} std {returns.std():.3f} "
          f"goal_rate {traj.n_goal() / len(returns):.3f}")
    return 0


def _compare(args):
    groups = {}
    for entry in args.paths:
        label, path = entry.split("=", 1) if "=" in entry else (args.label, entry)
        groups.setdefault(label, []).append(path)
    curves = {}
    for label, paths in groups.items():
        rows = report.aggregate(report.load_logs(paths), args.value)
        curves[label] = rows
        text = report.summary_table(rows, args.every)
        print(f"# {label} ({len(paths)} logs, {args.value})")
        print(text, end="")
        if args.out:
            prefix = args.out if len(groups) == 1 else f"{args.out}_{label}"
            with open(prefix + ".csv", "w") as fh:
                fh.write(report.summary_csv(rows))
            with open(prefix + ".txt", "w") as fh:
                fh.write(text)
    if args.plot:
        report.plot_learning_curves(curves, args.plot, args.value.replace("_", " "))
    return 0


def _selftest(args):
    kwargs = {"n_draws": 5, "n_bandit": 20_000} if args.quick else {}
    results = run_selftest(args.seed, **kwargs)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {"train": _train, "eval": _eval, "compare": _compare, "selftest": _selftest}
    try:
        return handlers[args.command](args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
