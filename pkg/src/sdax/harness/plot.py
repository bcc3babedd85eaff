"""Learning-curve and lambda-curve SVGs from metrics CSVs."""
from __future__ import annotations

import os
from collections import defaultdict

import numpy as np

from ..diffnet import ConfigError
from .train import read_metrics


def group_runs(paths, metric="obstacles_passed"):
    """Per method label: ``(iterations, mean, std, n_runs)`` of ``metric`` across seeds.

    Runs are truncated to the shortest one in their group.  With a single
    run the std is zero (no band).
    """
    if not paths:
        raise ConfigError("no metrics files given")
    series = defaultdict(list)
    for p in paths:
        meta, cols = read_metrics(p)
        label = f"{meta.get('method', '?')} ({meta.get('lambda', '?')})"
        series[label].append((cols["iteration"], cols[metric]))
    out = {}
    for label, runs in series.items():
        n = min(len(it) for it, _ in runs)
        stack = np.stack([v[:n] for _, v in runs])
        std = stack.std(axis=0, ddof=1) if len(runs) > 1 else np.zeros(n)
        out[label] = (runs[0][0][:n], stack.mean(axis=0), std, len(runs))
    return out


def _draw(groups, ylabel, path, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, (it, mean, std, n) in sorted(groups.items()):
        line, = ax.plot(it, mean, label=f"{label}, n={n}")
        if n > 1:
            ax.fill_between(it, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot(paths, out_prefix="plot", metric="obstacles_passed"):
    """Write ``<prefix>_curves.svg`` and ``<prefix>_lambda.svg``; returns both paths."""
    curves = _draw(group_runs(paths, metric), metric.replace("_", " "), f"{out_prefix}_curves.svg",
                   "learning curves (mean ± std over seeds)")
    lam = _draw(group_runs(paths, "lambda"), "lambda", f"{out_prefix}_lambda.svg", "balancing weight")
    return {"curves": curves, "lambda": lam}
