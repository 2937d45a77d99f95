"""Command-line entry point: ``mctscem run | aggregate | inspect-tree``."""
from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from .harness import (ConfigError, aggregate, aggregate_csv, build_config, load_config,
                      load_partial, read_steps_csv, run_and_emit, run_comparison)
from .mcts import parse_tree_dump, summarize_dump


def resolve_config(name: str) -> Path:
    """A path on disk, or the name of a bundled config such as ``pendulum``."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("mctscem") / "configs" / f"{name}.cfg"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config file not found: {name}")


def cmd_run(args) -> int:
    overrides = {"env": args.env, "episodes": args.episodes, "trials": args.trials, "seed": args.seed,
                 "out": args.out}
    planners = args.planner.split(",") if args.planner else None
    if planners:
        overrides["planner"] = planners[0]
    if args.config:
        cfg = load_config(resolve_config(args.config), overrides)
    else:
        cfg = build_config({k: v for k, v in overrides.items() if v is not None})
    if planners and len(planners) > 1:
        for name in planners:
            cfg.replace(planner=name)  # validate every name before any work
        results = run_comparison(cfg, planners, figure=not args.no_figure)
        for name, (_, aggs) in results.items():
            print(f"{name}: final-episode mean {aggs[-1].mean:.4f} (std {aggs[-1].std:.4f})")
    else:
        _, aggs = run_and_emit(cfg, figure=not args.no_figure)
        print(f"{cfg.planner}: final-episode mean {aggs[-1].mean:.4f} (std {aggs[-1].std:.4f})")
    print(f"results written to {cfg.out}")
    return 0


def cmd_aggregate(args) -> int:
    src = Path(args.inp)
    steps = src / "steps.csv"
    logs = read_steps_csv(steps) if steps.exists() else load_partial(src)
    if not logs:
        raise ConfigError(f"no episode logs found under {src}")
    aggs = aggregate(logs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(aggregate_csv(aggs))
    if not args.no_figure:
        from .plotting import plot_learning_curves
        plot_learning_curves({src.name: aggs}, out.with_suffix(".png"))
    print(f"aggregated {len(logs)} episodes into {out}")
    return 0


def cmd_inspect_tree(args) -> int:
    try:
        text = Path(args.inp).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {args.inp}: {exc.strerror}") from exc
    print(summarize_dump(parse_tree_dump(text)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mctscem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per episode")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", help="key = value config file, or a bundled name (pendulum, sparse-mountain-car)")
    run.add_argument("--env")
    run.add_argument("--planner", help="cem, mcts-random, mcts-cem or random; comma-separate to compare")
    run.add_argument("--episodes", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--no-figure", action="store_true", help="skip the learning-curve PNG")
    run.set_defaults(func=cmd_run)

    agg = sub.add_parser("aggregate", help="per-episode mean/std from a run directory")
    agg.add_argument("--in", dest="inp", required=True)
    agg.add_argument("--out", required=True)
    agg.add_argument("--no-figure", action="store_true")
    agg.set_defaults(func=cmd_aggregate)

    tree = sub.add_parser("inspect-tree", help="summarise an MCTS tree dump")
    tree.add_argument("--in", dest="inp", required=True)
    tree.set_defaults(func=cmd_inspect_tree)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
