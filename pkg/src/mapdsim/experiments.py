"""Batch experiment running, result aggregation, and the allocation
scalability benchmark."""

from __future__ import annotations

import csv
import random
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace, field
from pathlib import Path

import numpy as np

from .allocation import AgentContext, CostParams, GreedyEngine, build_matrices
from .grid import DistanceOracle
from .inventory import initialize_inventory
from .maps import load_map
from .sim import SimConfig, run_simulation
from .tasks import Task, TaskKind, bind_all


@dataclass
class ExperimentPlan:
    """Cartesian product of maps, densities, modes and seeds."""

    maps: list[str] = field(default_factory=lambda: ["restricted"])
    densities: list[float] = field(default_factory=lambda: [0.3])
    modes: list[str] = field(default_factory=lambda: ["m2m"])
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    base: SimConfig = field(default_factory=SimConfig)

    def configs(self) -> list[SimConfig]:
        out = []
        for map_name in self.maps:
            for density in self.densities:
                for mode in self.modes:
                    for seed in self.seeds:
                        out.append(
                            replace(
                                self.base,
                                map_name=map_name,
                                density=density,
                                mode=mode,
                                seed=seed,
                            )
                        )
        return out


def _run_one(args) -> tuple[dict, str | None]:
    config, out_root = args
    try:
        metrics, world = run_simulation(config, out_root=out_root)
        return (
            {
                "map": config.map_name,
                "density": config.density,
                "mode": config.mode,
                "seed": config.seed,
                "run_dir": config.run_name(),
            },
            None,
        )
    except Exception as exc:  # surfaced per-run, reported by the caller
        return (
            {
                "map": config.map_name,
                "density": config.density,
                "mode": config.mode,
                "seed": config.seed,
            },
            f"{type(exc).__name__}: {exc}",
        )


def reconstruct_completions(window_counts: list[int], window: int) -> list[int]:
    """Invert the rolling-window completion counts to per-tick counts."""
    per_tick = []
    for t, wc in enumerate(window_counts):
        prev = window_counts[t - 1] if t >= 1 else 0
        left = per_tick[t - window] if t >= window else 0
        per_tick.append(wc - prev + left)
    return per_tick


def summarize_run(run_dir: Path, window: int, seconds_per_step: float) -> dict:
    """Fold one run's metrics.csv into its summary scalars."""
    rows = list(csv.DictReader((run_dir / "metrics.csv").open()))
    window_counts = [int(r["window_completions"]) for r in rows]
    per_tick = reconstruct_completions(window_counts, window)
    cumulative = sum(per_tick)
    minutes = len(rows) * seconds_per_step / 60.0
    alloc = [float(r["alloc_wall_ms"]) for r in rows if float(r["alloc_wall_ms"]) > 0]
    return {
        "throughput": cumulative / minutes if minutes else 0.0,
        "completions": cumulative,
        "mean_alloc_ms": statistics.fmean(alloc) if alloc else 0.0,
    }


def run_experiment(
    plan: ExperimentPlan, out_root: str | Path, workers: int = 2
) -> tuple[list[dict], list[str]]:
    """Run every configured simulation and fold the per-condition summary.

    Summary statistics are recomputed from the metrics.csv files on disk,
    never from in-memory state, so they stay reproducible from the raw
    artifacts. Returns (summary rows, failure messages).
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    configs = plan.configs()
    jobs = [(cfg, out_root) for cfg in configs]
    results = []
    failures = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for info, err in pool.map(_run_one, jobs):
                (failures.append(f"{info}: {err}") if err else results.append(info))
    else:
        for job in jobs:
            info, err = _run_one(job)
            (failures.append(f"{info}: {err}") if err else results.append(info))

    window = max(1, int(plan.base.throughput_window_s / plan.base.seconds_per_step))
    summary = []
    by_condition: dict[tuple, list[dict]] = {}
    for info in results:
        folded = summarize_run(out_root / info["run_dir"], window, plan.base.seconds_per_step)
        key = (info["map"], info["density"], info["mode"])
        by_condition.setdefault(key, []).append(folded)
    for (map_name, density, mode), folds in sorted(by_condition.items()):
        tps = [f["throughput"] for f in folds]
        summary.append(
            {
                "map": map_name,
                "density": density,
                "mode": mode,
                "runs": len(folds),
                "mean_throughput": statistics.fmean(tps),
                "median_throughput": statistics.median(tps),
                "std_throughput": statistics.pstdev(tps) if len(tps) > 1 else 0.0,
                "mean_alloc_ms": statistics.fmean(f["mean_alloc_ms"] for f in folds),
            }
        )
    return summary, failures


def write_summary_csv(summary: list[dict], path: Path) -> None:
    cols = [
        "map", "density", "mode", "runs",
        "mean_throughput", "median_throughput", "std_throughput", "mean_alloc_ms",
    ]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in summary:
            writer.writerow(
                {
                    **row,
                    "mean_throughput": f"{row['mean_throughput']:.2f}",
                    "median_throughput": f"{row['median_throughput']:.2f}",
                    "std_throughput": f"{row['std_throughput']:.2f}",
                    "mean_alloc_ms": f"{row['mean_alloc_ms']:.2f}",
                }
            )


def make_bench_instance(
    grid, oracle, inv, m: int, n: int, rng: random.Random
) -> tuple[list[AgentContext], list[Task]]:
    """Synthetic sizing instance: random agent cells, live-inventory tasks."""
    cells = grid.free_cells()
    agents = [AgentContext(i, rng.choice(cells)) for i in range(m)]
    stocked = inv.stocked_skus()
    tasks = []
    for i in range(n):
        if rng.random() < 0.5 and stocked:
            tasks.append(Task(i, TaskKind.OUTBOUND, rng.choice(stocked), 0))
        else:
            tasks.append(Task(i, TaskKind.INBOUND, rng.randrange(inv.num_skus), 0))
    tasks = bind_all(tasks, inv, grid)
    return agents, tasks


def bench_initial_allocation(
    sizes: list[tuple[int, int]],
    map_name: str = "restricted",
    repeats: int = 10,
    density: float = 0.3,
    seed: int = 0,
) -> list[dict]:
    """Wall-clock the greedy construction alone over an (M, N) ladder."""
    grid = load_map(map_name)
    oracle = DistanceOracle(grid)
    params = CostParams()
    out = []
    for m, n in sizes:
        times = []
        rng = random.Random(seed)
        for rep in range(repeats):
            inv = initialize_inventory(grid, density, 30, rng)
            agents, tasks = make_bench_instance(grid, oracle, inv, m, n, rng)
            mats = build_matrices(agents, tasks, oracle, params)
            t0 = time.perf_counter()
            engine = GreedyEngine(mats, agents, params)
            engine.run()
            times.append(time.perf_counter() - t0)
        out.append(
            {
                "m": m,
                "n": n,
                "mean_s": statistics.fmean(times),
                "std_s": statistics.pstdev(times) if len(times) > 1 else 0.0,
            }
        )
    return out


def write_bench_csv(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["m", "n", "mean_s", "std_s"])
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "m": row["m"],
                    "n": row["n"],
                    "mean_s": f"{row['mean_s']:.4f}",
                    "std_s": f"{row['std_s']:.4f}",
                }
            )
