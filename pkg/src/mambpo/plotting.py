"""Smoothed learning curves across runs, as SVG plus the CSV it was drawn from."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .evaluation import moving_average

log = logging.getLogger(__name__)


def read_returns(run_dir) -> np.ndarray:
    path = Path(run_dir) / "metrics.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path}: no metrics")
    with open(path, newline="") as fh:
        return np.array([float(r["return"]) for r in csv.DictReader(fh)])


def aggregate_curves(series: list[np.ndarray], window: int = 200):
    """Smooth each run, truncate to the shortest, return ``(episodes, mean, sem)``.

    The standard error uses ``ddof=1`` and is zero for a single run.
    """
    if not series:
        raise ValueError("no runs given")
    n = min(len(s) for s in series)
    if any(len(s) != n for s in series):
        log.warning("runs have different lengths; truncating all to %d episodes", n)
    smooth = np.stack([moving_average(s[:n], window) for s in series])
    mean = smooth.mean(axis=0)
    sem = smooth.std(axis=0, ddof=1) / np.sqrt(len(series)) if len(series) > 1 else np.zeros(n)
    return np.arange(1, n + 1), mean, sem


def write_curve_csv(path, curves: dict) -> None:
    """``curves`` maps a label to ``(episodes, mean, sem, n_runs)``; one row per label and episode."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "episode", "mean_return", "sem_return", "n_runs"])
        for name, (episodes, mean, sem, n_runs) in curves.items():
            for e, m, s in zip(episodes, mean, sem):
                w.writerow([name, int(e), repr(float(m)), repr(float(s)), n_runs])


def read_curve_csv(path) -> dict:
    """Inverse of :func:`write_curve_csv`: label -> ``(episodes, mean, sem)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for name in dict.fromkeys(r["curve"] for r in rows):
        sel = [r for r in rows if r["curve"] == name]
        out[name] = (np.array([int(r["episode"]) for r in sel]), np.array([float(r["mean_return"]) for r in sel]),
                     np.array([float(r["sem_return"]) for r in sel]))
    return out


def plot_runs(run_dirs, out_prefix, window: int = 200, labels=None, title: str | None = None) -> tuple[Path, Path]:
    """Write ``<out_prefix>.csv`` and ``<out_prefix>.svg``.

    ``run_dirs`` is either a flat list of runs (one curve) or a dict mapping a
    curve label to its list of runs. The SVG is drawn from the values read back
    from the CSV so both carry the same numbers.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups = run_dirs if isinstance(run_dirs, dict) else {labels or "return": list(run_dirs)}
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out_prefix.with_suffix(".csv"), out_prefix.with_suffix(".svg")
    aggregated = {}
    for name, dirs in groups.items():
        aggregated[name] = (*aggregate_curves([read_returns(d) for d in dirs], window), len(dirs))
    write_curve_csv(csv_path, aggregated)
    curves = read_curve_csv(csv_path)

    plt.rcParams["svg.hashsalt"] = "mambpo"
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (ep, mean, sem) in curves.items():
        line, = ax.plot(ep, mean, label=name)
        if np.any(sem > 0):
            ax.fill_between(ep, mean - sem, mean + sem, color=line.get_color(), alpha=0.25, linewidth=0)
    ax.set_xlabel("episode")
    ax.set_ylabel(f"return ({window}-episode moving average)")
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg_path, csv_path
