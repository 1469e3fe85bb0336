"""Figures written next to the CSV outputs (learning curves, memory heat maps)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIG_WIDTH = 6.4
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

STYLE = {
    "axes.labelsize": 10,
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "mcrmlab",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_curves(points, path, title: str | None = None) -> Path:
    """One line per (split, metric) against iteration; log-scale when positive."""
    series: dict[tuple[str, str], list] = {}
    for it, split, metric, value, *_ in points:
        series.setdefault((split, metric), []).append((int(it), float(value)))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(FIG_WIDTH, FIG_WIDTH * GOLDEN))
        positive = True
        for (split, metric), xy in sorted(series.items()):
            xs, ys = zip(*xy)
            positive &= min(ys) > 0
            ax.plot(xs, ys, marker="." if len(xs) < 30 else None, label=f"{split} {metric}")
        if positive and series:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("value")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_heatmap(grid, path, symbols=None, title: str | None = None) -> Path:
    """Neurons down, time across; red negative, blue positive."""
    grid = np.asarray(grid)
    bound = max(float(np.abs(grid).max()), 1e-12)
    with plt.rc_context(STYLE):
        height = min(max(2.0, 0.06 * grid.shape[0] + 1.0), 12.0)
        width = min(max(4.0, 0.12 * grid.shape[1] + 1.5), 16.0)
        fig, ax = plt.subplots(figsize=(width, height))
        im = ax.imshow(grid, aspect="auto", cmap="RdBu", vmin=-bound, vmax=bound, interpolation="nearest")
        if symbols is not None and len(symbols) <= 120:
            ax.set_xticks(range(len(symbols)))
            ax.set_xticklabels([repr(s)[1:-1] if isinstance(s, str) else str(s) for s in symbols], fontsize=6)
        else:
            ax.set_xlabel("step")
        ax.set_ylabel("neuron")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.03)
        return _save(fig, path)
