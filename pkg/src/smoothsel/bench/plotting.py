"""Figures for result CSVs. matplotlib is imported lazily and is optional."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

from smoothsel.bench.io import series_key
from smoothsel.errors import ConfigurationError


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise ConfigurationError("plotting needs matplotlib; install the 'plot' extra") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_accuracy(rows: Sequence[dict], path, title: str = "") -> Path:
    """One panel per m: accuracy vs epsilon with min/max bars per series."""
    plt = _pyplot()
    by_m = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if row["accuracy_mean"] == "infeasible":
            continue
        by_m[int(row["m"])][series_key(row)].append(row)
    ms = sorted(by_m)
    if not ms:
        raise ConfigurationError("no feasible rows to plot")
    fig, axes = plt.subplots(1, len(ms), figsize=(4 * len(ms), 3.4), sharey=True, squeeze=False)
    for ax, m in zip(axes[0], ms):
        for label, series in by_m[m].items():
            series = sorted(series, key=lambda r: float(r["epsilon"]))
            eps = [float(r["epsilon"]) for r in series]
            mean = [float(r["accuracy_mean"]) for r in series]
            lo = [mu - float(r["accuracy_min"]) for mu, r in zip(mean, series)]
            hi = [float(r["accuracy_max"]) - mu for mu, r in zip(mean, series)]
            ax.errorbar(eps, mean, yerr=[lo, hi], marker="o", ms=3, capsize=2, label=label)
        ax.set_title(f"m = {m}")
        ax.set_xlabel("epsilon")
        ax.set_ylim(0, 1.02)
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("accuracy")
    axes[0][-1].legend(fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_timing(rows: Sequence[dict], path) -> Path:
    """Seconds per selection vs m on log-log axes."""
    plt = _pyplot()
    series = defaultdict(list)
    for row in rows:
        key = row["mechanism"] if row["mechanism"] != "sps" else f"sps:{row['case']}"
        series[key].append(row)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for label, block in series.items():
        block = sorted(block, key=lambda r: int(r["m"]))
        ax.loglog([int(r["m"]) for r in block],
                  [float(r["seconds_per_selection"]) for r in block], marker="o", label=label)
    ax.set_xlabel("m")
    ax.set_ylabel("seconds per selection")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
