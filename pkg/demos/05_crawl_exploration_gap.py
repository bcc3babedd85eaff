"""Skill discovery versus task reward alone on the crawl course.

Trains SDAX (METRA skills on body height, adaptive lambda) and the task-only
baseline with the same seed.  The baseline tends to stop in front of the
first bar; the height skills find the crouch.  Takes a few minutes per run;
pass a smaller iteration count as the first argument for a quick look.
"""
import os
import sys

from sdax.harness import load_config, plot, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
out = os.path.join(os.path.dirname(__file__), "runs_crawl")
paths = []
for method in ("sdax-metra", "task-only"):
    cfg = load_config(overrides={"task": "crawl", "method": method, "iterations": iterations})
    (metrics, _), = train(cfg, out, seeds=[0]).values()
    paths.append(metrics)
    print(f"{method}: metrics in {metrics}")
print(plot(paths, os.path.join(out, "crawl")))
