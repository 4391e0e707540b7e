"""Command-line front end.

Subcommands: run (one simulation), experiment (batch over maps, densities,
modes and seeds with a summary table), bench-alloc (initial-allocation
scalability ladder), validate (replay a path dump and report collisions),
dump-map (inspect a bundled layout). Every default reproduces the
restricted-map, 30%-density, many-to-many condition.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import yaml

from .experiments import (
    ExperimentPlan,
    bench_initial_allocation,
    run_experiment,
    write_bench_csv,
    write_summary_csv,
)
from .maps import MAP_NAMES, load_map, map_text
from .mapf import validate_executed
from .report import render_bench_figure, render_experiment_figure, render_run_figure
from .sim import SimConfig, run_simulation

CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(SimConfig)}


def load_config(path: str | None, overrides: dict) -> SimConfig:
    """Key-value config file merged with command-line overrides."""
    values = {}
    if path:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        unknown = set(raw) - set(CONFIG_FIELDS)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SimConfig(**values)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML key-value config file")
    parser.add_argument("--map", dest="map_name", choices=MAP_NAMES)
    parser.add_argument("--mode", choices=["m2m", "wsku", "o2o"])
    parser.add_argument("--density", type=float)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--agents", dest="num_agents", type=int)
    parser.add_argument("--budget", dest="alloc_budget_s", type=float)
    parser.add_argument("--lns-clock", dest="lns_clock", choices=["wall", "iteration"])
    parser.add_argument("--lns-iterations", dest="lns_iterations", type=int)
    parser.add_argument("--out", default="runs", help="output directory root")
    parser.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def cmd_run(args) -> int:
    overrides = {
        k: getattr(args, k, None)
        for k in (
            "map_name", "mode", "density", "horizon", "num_agents",
            "alloc_budget_s", "lns_clock", "lns_iterations", "seed",
        )
    }
    overrides["dump_paths"] = True if args.dump_paths else None
    config = load_config(args.config, overrides)
    metrics, world = run_simulation(config, out_root=args.out)
    run_dir = Path(args.out) / config.run_name()
    if not args.no_figures:
        render_run_figure(run_dir)
    tp = metrics.final_throughput(config.seconds_per_step)
    print(f"run {config.run_name()}: {metrics.cumulative} completions, "
          f"{tp:.2f} tasks/min -> {run_dir}")
    return 0


def cmd_experiment(args) -> int:
    overrides = {
        k: getattr(args, k, None)
        for k in ("horizon", "num_agents", "alloc_budget_s", "lns_clock", "lns_iterations")
    }
    base = load_config(args.config, overrides)
    plan = ExperimentPlan(
        maps=args.maps.split(","),
        densities=[float(d) for d in args.densities.split(",")],
        modes=args.modes.split(","),
        seeds=list(range(args.seeds)),
        base=base,
    )
    summary, failures = run_experiment(plan, args.out, workers=args.workers)
    out_root = Path(args.out)
    write_summary_csv(summary, out_root / "summary.csv")
    if not args.no_figures:
        infos = [
            {
                "map": c.map_name,
                "density": c.density,
                "mode": c.mode,
                "run_dir": c.run_name(),
            }
            for c in plan.configs()
        ]
        done = {f.name for f in out_root.iterdir() if f.is_dir()}
        render_experiment_figure(out_root, [i for i in infos if i["run_dir"] in done])
    for row in summary:
        print(
            f"{row['map']} d={row['density']} {row['mode']}: "
            f"mean {row['mean_throughput']:.2f} median {row['median_throughput']:.2f} "
            f"std {row['std_throughput']:.2f} tasks/min "
            f"(alloc {row['mean_alloc_ms']:.1f} ms, {row['runs']} runs)"
        )
    for failure in failures:
        print(f"FAILED: {failure}", file=sys.stderr)
    print(f"summary -> {out_root / 'summary.csv'}")
    return 1 if failures else 0


def cmd_bench_alloc(args) -> int:
    sizes = [(int(s), int(s)) for s in args.sizes.split(",")]
    rows = bench_initial_allocation(
        sizes, map_name=args.map_name or "restricted",
        repeats=args.repeats, density=args.density or 0.3, seed=args.seed,
    )
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, out_root / "bench_alloc.csv")
    if not args.no_figures:
        render_bench_figure(rows, out_root / "bench_alloc.png")
    for row in rows:
        print(f"M=N={row['m']}: {row['mean_s']*1000:.1f} ms mean, "
              f"{row['std_s']*1000:.1f} ms std")
    print(f"table -> {out_root / 'bench_alloc.csv'}")
    return 0


def cmd_validate(args) -> int:
    executed: dict[int, list] = {}
    with open(args.paths) as fh:
        for row in csv.DictReader(fh):
            executed.setdefault(int(row["agent"]), []).append(
                (int(row["x"]), int(row["y"]))
            )
    grid = load_map(args.map_name) if args.map_name else None
    problems = validate_executed(executed, grid)
    for problem in problems:
        print(problem)
    print(f"{len(executed)} agents, "
          f"{'no collisions' if not problems else f'{len(problems)} problems'}")
    return 1 if problems else 0


def cmd_dump_map(args) -> int:
    grid = load_map(args.map_name)
    print(map_text(args.map_name), end="")
    print(
        f"# {grid.width}x{grid.height}, {len(grid.storage_endpoints)} storage, "
        f"{len(grid.loading_endpoints)} loading endpoints",
        file=sys.stderr,
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mapdsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    _add_common(p_run)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--dump-paths", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_exp = sub.add_parser("experiment", help="batch runs + summary table")
    _add_common(p_exp)
    p_exp.add_argument("--maps", default="restricted")
    p_exp.add_argument("--densities", default="0.3")
    p_exp.add_argument("--modes", default="m2m,o2o")
    p_exp.add_argument("--seeds", type=int, default=10)
    p_exp.add_argument("--workers", type=int, default=2)
    p_exp.set_defaults(func=cmd_experiment)

    p_bench = sub.add_parser("bench-alloc", help="initial-allocation scalability")
    _add_common(p_bench)
    p_bench.add_argument("--sizes", default="50,70,90,110,130,150")
    p_bench.add_argument("--repeats", type=int, default=10)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.set_defaults(func=cmd_bench_alloc)

    p_val = sub.add_parser("validate", help="replay a paths.csv dump")
    p_val.add_argument("paths")
    p_val.add_argument("--map", dest="map_name", choices=MAP_NAMES)
    p_val.set_defaults(func=cmd_validate)

    p_dump = sub.add_parser("dump-map", help="print a bundled map")
    p_dump.add_argument("map_name", choices=MAP_NAMES)
    p_dump.set_defaults(func=cmd_dump_map)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
