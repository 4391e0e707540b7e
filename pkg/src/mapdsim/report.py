"""Figure rendering for run and experiment reports.

Figures are written next to the delimited outputs; the CSV files remain the
machine-readable contract.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

MODE_COLORS = {"m2m": "#7b3fa0", "wsku": "#e08a2e", "o2o": "#3a8f4e"}


def _read_throughput(run_dir: Path) -> tuple[list[float], list[float]]:
    ts, tps = [], []
    with (run_dir / "metrics.csv").open() as fh:
        for row in csv.DictReader(fh):
            ts.append(int(row["t"]) / 60.0)
            tps.append(float(row["throughput"]))
    return ts, tps


def render_run_figure(run_dir: Path) -> Path:
    """Rolling throughput curve for a single run."""
    ts, tps = _read_throughput(run_dir)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ts, tps, lw=1.2, color="#7b3fa0")
    ax.set_xlabel("simulated minutes")
    ax.set_ylabel("throughput (tasks/min)")
    ax.set_title(run_dir.name)
    ax.grid(alpha=0.3)
    out = run_dir / "throughput.png"
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out


def render_experiment_figure(out_root: Path, run_infos: list[dict]) -> list[Path]:
    """Per-condition rolling-throughput comparison, one panel per map/density.

    Solid line is the seed mean, the shaded band one standard deviation.
    """
    import numpy as np

    panels: dict[tuple, dict[str, list]] = {}
    for info in run_infos:
        key = (info["map"], info["density"])
        series = _read_throughput(out_root / info["run_dir"])[1]
        panels.setdefault(key, {}).setdefault(info["mode"], []).append(series)
    outputs = []
    for (map_name, density), modes in sorted(panels.items()):
        fig, ax = plt.subplots(figsize=(7.5, 4.5))
        for mode in sorted(modes):
            series = modes[mode]
            length = min(len(s) for s in series)
            arr = np.array([s[:length] for s in series])
            xs = np.arange(length) / 60.0
            mean = arr.mean(axis=0)
            std = arr.std(axis=0)
            color = MODE_COLORS.get(mode, None)
            ax.plot(xs, mean, label=mode, lw=1.4, color=color)
            ax.fill_between(xs, mean - std, mean + std, alpha=0.2, color=color)
        ax.set_xlabel("simulated minutes")
        ax.set_ylabel("throughput (tasks/min)")
        ax.set_title(f"{map_name} @ {int(density * 100)}% inventory density")
        ax.legend()
        ax.grid(alpha=0.3)
        out = out_root / f"throughput-{map_name}-d{int(density * 100)}.png"
        fig.tight_layout()
        fig.savefig(out, dpi=130)
        plt.close(fig)
        outputs.append(out)
    return outputs


def render_bench_figure(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ms = [r["m"] for r in rows]
    means = [r["mean_s"] for r in rows]
    stds = [r["std_s"] for r in rows]
    ax.errorbar(ms, means, yerr=stds, marker="o", capsize=3, color="#7b3fa0")
    ax.set_xlabel("agents = tasks")
    ax.set_ylabel("initial allocation time (s)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
