"""Command-line front end: demo-gen, train, eval, verify, plot."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bench import tasks as T
from .bench.dataset import read_dataset, write_dataset
from .config import ConfigError, load_config
from .evaluate import EvalError, eval_seeds, evaluate, evaluate_model, oracle_policy
from .nets import ModelError, load_checkpoint
from .plotting import PlotError, plot_curves
from .tensorio import FormatError
from .train import TrainError, train

log = logging.getLogger("eqtp")

EVAL_FIELDS = ("policy", "task", "episodes", "seed", "score")
KNOWN_ERRORS = (ConfigError, EvalError, FormatError, ModelError, PlotError, T.TaskError, TrainError, OSError)


def cmd_demo_gen(args) -> int:
    if args.count <= 0:
        raise ConfigError("--count must be positive")
    spec = T.task(args.task)
    demos = T.demonstrations(spec, args.count, args.seed)
    write_dataset(args.out, demos)
    check = read_dataset(args.out)
    print(f"wrote {len(check)} records from {args.count} episodes of {args.task} to {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = {}
    if args.baseline:
        overrides["baseline"] = "true"
    if args.goal:
        overrides["model.goal"] = "true"
    cfg = load_config(args.config, **overrides)
    if cfg.model.goal and cfg.task != "goal-insertion":
        raise ConfigError(f"--goal needs a task with goal images; {cfg.task} has none")
    if args.out:
        cfg = replace(cfg, out=args.out)
    result = train(cfg)
    out = Path(cfg.out)
    if result.rows:
        plot_curves(out / "report.csv", out / "report.png", title=f"{cfg.task}")
    best = result.best
    if best is not None:
        print(f"best score {best['score']:.3f} at step {best['step']}; report in {out / 'report.csv'}")
    return 0


def cmd_eval(args) -> int:
    spec = T.task(args.task)
    if args.oracle == bool(args.checkpoint):
        raise EvalError("pass exactly one of --checkpoint or --oracle")
    seeds = eval_seeds(args.seed, args.episodes)
    if args.oracle:
        score = sum(evaluate(spec, seeds, lambda s: oracle_policy(spec, s))) / len(seeds)
        policy = "oracle"
    else:
        model, meta = load_checkpoint(args.checkpoint)
        trained = meta.get("task")
        if trained is not None and trained != spec.name:
            raise EvalError(f"checkpoint was trained on {trained}, not {spec.name}")
        score = evaluate_model(model, spec, args.episodes, args.seed)
        policy = str(args.checkpoint)
    out = Path(args.csv)
    new = not out.exists() or out.stat().st_size == 0
    with open(out, "a", newline="") as fp:
        w = csv.writer(fp)
        if new:
            w.writerow(EVAL_FIELDS)
        w.writerow([policy, spec.name, args.episodes, args.seed, f"{score:.4f}"])
    print(f"{spec.name}: mean score {score:.4f} over {args.episodes} episodes")
    return 0


def cmd_verify(args) -> int:
    from . import verify

    def show(row):
        print(verify.format_row(row), flush=True)

    try:
        print(verify.format_table([]), flush=True)
        rows = verify.run(args.group, args.tolerance, args.sabotage, args.seeds, args.sigma, progress=show)
    except verify.VerifyError as e:
        raise ConfigError(str(e)) from e
    show(rows[-1])
    failed = [r.id for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} properties pass" +
          (f"; failing: {' '.join(failed)}" if failed else ""))
    return 1 if failed else 0


def cmd_plot(args) -> int:
    png, table = plot_curves(args.csv, args.out, args.title)
    print(f"wrote {png} and {table}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eqtp", description="Rotation-equivariant pick-and-place toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("demo-gen", help="record oracle demonstrations")
    d.add_argument("--task", required=True, choices=T.TASKS)
    d.add_argument("--count", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_demo_gen)

    t = sub.add_parser("train", help="behavior cloning from a demonstration file")
    t.add_argument("--config", required=True)
    t.add_argument("--baseline", action="store_true", help="train the non-equivariant model")
    t.add_argument("--goal", action="store_true", help="stack the goal image onto the observation")
    t.add_argument("--out", help="output directory (overrides the config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint (or the oracle) on unseen seeds")
    e.add_argument("--checkpoint")
    e.add_argument("--oracle", action="store_true")
    e.add_argument("--task", required=True, choices=T.TASKS)
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--csv", default="eval.csv", help="CSV file the result row is appended to")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the equivariance property battery")
    v.add_argument("--group", type=int, default=4, help="cyclic group order for group-dependent rows")
    v.add_argument("--tolerance", type=float, default=0.05, help="relative tolerance for interpolated rows")
    v.add_argument("--sigma", type=float, default=6.0, help="smoothing of random inputs for interpolated rows")
    v.add_argument("--seeds", type=int, default=20)
    v.add_argument("--sabotage", choices=("baseline-prop2",), help="inject a known failure")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("plot", help="success rate vs training steps")
    g.add_argument("--csv", required=True, nargs="+")
    g.add_argument("--out", required=True)
    g.add_argument("--title", default="")
    g.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except KNOWN_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
