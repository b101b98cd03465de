"""Aggregating per-seed metrics logs and drawing learning curves.

matplotlib is imported lazily and only by :func:`plot_learning_curves`, so
the core package runs without it.
"""

from __future__ import annotations

import csv
import io
import math
import os

import numpy as np

from .harness import read_metrics_csv

SUMMARY_VALUE = "eval_return"


def load_logs(paths):
    """Metrics rows for each path; a directory stands for its metrics.csv."""
    logs = []
    for p in paths:
        if os.path.isdir(p):
            p = os.path.join(p, "metrics.csv")
        logs.append(read_metrics_csv(p))
    return logs


def aggregate(logs, value=SUMMARY_VALUE):
    """Per-record mean/std across seeds, aligned by record index.

    Logs of unequal length are truncated to the shortest. The step column is
    the mean of ``env_steps`` over seeds (identical for matched configs).
    """
    if not logs:
        raise ValueError("no metrics logs to aggregate")
    n = min(len(log) for log in logs)
    rows = []
    for i in range(n):
        vals = np.array([log[i][value] for log in logs])
        steps = np.array([log[i]["env_steps"] for log in logs])
        rows.append({
            "cycle": int(logs[0][i]["cycle"]),
            "env_steps": float(steps.mean()),
            "mean": float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else math.nan,
            "std": float(np.nanstd(vals)) if np.any(np.isfinite(vals)) else math.nan,
            "n": int(np.isfinite(vals).sum()),
        })
    return rows


def summary_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["cycle", "env_steps", "mean", "std", "n"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def summary_table(rows, every=1):
    lines = [f"{'cycle':>7} {'env_steps':>11} {'mean':>12} {'std':>10} {'n':>3}"]
    for i, row in enumerate(rows):
        if i % every and i != len(rows) - 1:
            continue
        lines.append(f"{row['cycle']:>7d} {row['env_steps']:>11.0f} {row['mean']:>12.2f} {row['std']:>10.2f} {row['n']:>3d}")
    return "\n".join(lines) + "\n"


def plot_learning_curves(curves, path, value_label="evaluation return", title=None):
    """Mean curve with a +-1 std band per labelled summary; saved to ``path``.

    ``curves`` maps a label to rows from :func:`aggregate`.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, rows in curves.items():
        x = np.array([r["env_steps"] for r in rows]) / 1000.0
        m = np.array([r["mean"] for r in rows])
        s = np.array([r["std"] for r in rows])
        line, = ax.plot(x, m, label=label, lw=1.5)
        ax.fill_between(x, m - s, m + s, color=line.get_color(), alpha=0.2, lw=0)
    ax.set_xlabel("Time steps (x1000)")
    ax.set_ylabel(value_label)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
