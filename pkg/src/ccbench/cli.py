"""Command-line entry point: ``ccbench run|grid|table|check``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config, parse_seeds
from .core import ConfigurationError
from .experiment import DISPLAY_NAMES, grid_search, run_experiment, seed_performances
from .table import table_from_dir

log = logging.getLogger("ccbench")


def _load(args):
    config = load_config(args.config)
    changes = {}
    if args.seeds is not None:
        changes["seeds"] = parse_seeds(args.seeds)
    if args.iters is not None:
        changes["num_iterations"] = args.iters
    if args.steps is not None:
        changes["sim_steps_per_iter"] = args.steps
    if args.no_timing:
        changes["record_timing"] = False
    return config.replace(**changes) if changes else config


def cmd_run(args) -> int:
    config = _load(args)
    runs = run_experiment(config, args.out, jobs=args.jobs)
    name = DISPLAY_NAMES.get(config.algorithm, config.algorithm)
    for seed, perf in sorted(seed_performances(runs).items()):
        print(f"{config.task_id} {name} seed {seed}: performance {perf:.2f}")
    return 0


def cmd_grid(args) -> int:
    config = _load(args)
    if not config.grid:
        raise ConfigurationError("config has no [grid] section")
    best, points = grid_search(config, None, args.out, jobs=args.jobs)
    for p in points:
        shown = "failed: " + p.error if p.error else f"score {p.score:.2f}"
        print(f"point {p.index:3d} {p.hyperparameters}: {shown}")
    print(f"best: point {best.index} {best.hyperparameters} (score {best.score:.2f})")
    return 0


def cmd_table(args) -> int:
    table = table_from_dir(args.results)
    print(table.render_text())
    if args.csv:
        Path(args.csv).write_text(table.render_csv())
    return 0


def cmd_check(args) -> int:
    from .checks import run_all

    select = {int(x) for x in args.only.split(",")} if args.only else None
    results = run_all(select)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {failed}" if failed else ""))
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccbench", description="Continuous-control benchmark harness.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("config", help="INI experiment config")
        p.add_argument("--seeds", help="override seeds, e.g. 0,1,2 or 0-4")
        p.add_argument("--iters", type=int, help="override num_iterations")
        p.add_argument("--steps", type=int, help="override sim_steps_per_iter")
        p.add_argument("--out", default="results", help="results directory (default: results)")
        p.add_argument("--jobs", type=int, default=1, help="seeds run in parallel processes")
        p.add_argument("--no-timing", action="store_true", help="write wall_ms = 0 for byte-reproducible CSVs")

    p = sub.add_parser("run", help="run one config over its seeds")
    experiment_flags(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("grid", help="grid search over the config's [grid] section")
    experiment_flags(p)
    p.set_defaults(func=cmd_grid)
    p = sub.add_parser("table", help="comparison table from a results directory")
    p.add_argument("results", help="directory written by run")
    p.add_argument("--csv", help="also write the table as CSV to this path")
    p.set_defaults(func=cmd_table)
    p = sub.add_parser("check", help="run the acceptance checks")
    p.add_argument("--only", help="comma list of criterion numbers")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
