"""Command line entry point: train, eval, collapse, plot, inspect-config.

Exit status is 0 on success, 2 for configuration problems and 3 when a run
hits a numerical fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .diffnet import ConfigError
from .policy import NumericalFault

EXIT_OK, EXIT_CONFIG, EXIT_FAULT = 0, 2, 3


def _config(args):
    from .harness.config import _merge, load_config, parse_override

    overrides = {}
    for text in args.set or []:
        overrides = _merge(overrides, parse_override(text))
    return load_config(args.config, overrides)


def cmd_train(args):
    from .harness.train import train

    cfg = _config(args)
    results = train(cfg, args.out, seeds=args.seeds, iterations=args.iterations)
    for seed, (metrics, ckpt) in results.items():
        print(f"seed {seed}: metrics {metrics}, checkpoint {ckpt}")


def cmd_eval(args):
    from .harness.evaluate import evaluate_rollout

    z = args.z
    if z not in (None, "random"):
        z = [float(v) for v in z.split(",")]
    summary = evaluate_rollout(args.checkpoint, z, seed=args.seed, trajectory_path=args.trajectory,
                               task=args.task)
    summary.pop("trajectory")
    print(json.dumps(summary, indent=2))


def cmd_collapse(args):
    from .harness.evaluate import evaluate_positive_collapse

    res = evaluate_positive_collapse(args.checkpoint, args.skills, args.repeats, args.seed, args.task)
    print(f"success {res['mean']:.1f} ± {res['std']:.1f} % ({res['n_repeats']} x {res['n_skills']} skills)")
    if args.json:
        print(json.dumps(res))


def cmd_plot(args):
    from .harness.plot import plot

    for kind, path in plot(args.files, args.out, args.metric).items():
        print(f"{kind}: {path}")


def cmd_inspect(args):
    cfg = _config(args)
    d = cfg.to_dict()
    if args.resolved:
        # derived view: not loadable back as a config
        d = {"config": d, "env": cfg.env_config().to_dict(), "lambda": list(cfg.effective_lambda())}
    print(json.dumps(d, indent=2))


def build_parser():
    p = argparse.ArgumentParser(prog="sdax", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON config merged over the shipped defaults")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a setting, e.g. --set ppo.lr=1e-4 --set method=task-only")

    t = sub.add_parser("train", help="train one config over its seeds")
    with_config(t)
    t.add_argument("--out", help="output directory (default: config out_dir)")
    t.add_argument("--seeds", type=int, nargs="+")
    t.add_argument("--iterations", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="one deterministic rollout of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--z", default="random", help="comma separated skill vector or 'random'")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--trajectory", help="write the trajectory CSV here")
    e.add_argument("--task", help="fail unless the checkpoint was trained on this task")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("collapse", help="skill success ratio over repeated prior samples")
    c.add_argument("checkpoint")
    c.add_argument("--skills", type=int, default=100)
    c.add_argument("--repeats", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--task")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_collapse)

    pl = sub.add_parser("plot", help="SVG learning and lambda curves")
    pl.add_argument("files", nargs="*")
    pl.add_argument("--out", default="plot", help="output prefix")
    pl.add_argument("--metric", default="obstacles_passed")
    pl.set_defaults(func=cmd_plot)

    i = sub.add_parser("inspect-config", help="print the merged config as loadable JSON")
    with_config(i)
    i.add_argument("--resolved", action="store_true", help="also show the course settings and effective lambda")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    from .harness.train import TrainingFault

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except (ConfigError, FileNotFoundError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingFault, NumericalFault, FloatingPointError) as e:
        print(f"numerical fault: {e}", file=sys.stderr)
        return EXIT_FAULT
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
