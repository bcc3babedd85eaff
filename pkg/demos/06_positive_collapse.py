"""Skill success ratio across checkpoints on the leap course.

Trains SDAX on leap, saving a checkpoint every few hundred iterations, then
rolls out 10 x 100 random skills deterministically at each checkpoint.  As
the task reward spreads through the shared policy, more and more skills
clear the first gap.  Seed 1 shows the rise cleanly (about 0 -> 51 -> 54 %);
seed 0 levels off just under half.  Pass a seed as the second argument.
"""
import glob
import os
import sys

from sdax.harness import evaluate_positive_collapse, load_config, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 1
out = os.path.join(os.path.dirname(__file__), "runs_leap")
cfg = load_config(overrides={"task": "leap", "method": "sdax-metra", "iterations": iterations,
                             "checkpoint_every": max(1, iterations // 3)})
train(cfg, out, seeds=[seed])
for ckpt in sorted(glob.glob(os.path.join(out, cfg.run_name(seed), "ckpt_*.json"))):
    res = evaluate_positive_collapse(ckpt)
    print(f"{os.path.basename(ckpt)}: {res['mean']:.1f} ± {res['std']:.1f} % of skills pass a gap")
