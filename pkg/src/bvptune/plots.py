"""Deterministic SVG figures for Pareto fronts and timing benchmarks."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["front_figure", "bar_chart"]

_RC = {"svg.hashsalt": "bvptune", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def front_figure(front_values: np.ndarray, labels, path, trials: np.ndarray | None = None) -> Path:
    """Scatter of a 2-objective front, or two panels colored by the third objective.

    Front points are drawn in red over the (optional) cloud of all trials;
    their SVG group ids are ``front`` (or ``front-0``/``front-1`` for panels).
    """
    F = np.asarray(front_values, dtype=float)
    m = F.shape[1]
    with matplotlib.rc_context(_RC):
        if m == 2:
            fig, ax = plt.subplots(figsize=(5.5, 4.5))
            if trials is not None and len(trials):
                ax.scatter(trials[:, 0], trials[:, 1], s=6, c="tab:blue", alpha=0.3, label="trials")
            ax.scatter(F[:, 0], F[:, 1], s=18, c="red", label="best trials", gid="front")
            ax.set_xlabel(labels[0])
            ax.set_ylabel(labels[1])
            ax.legend(loc="best")
        elif m == 3:
            fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
            for n, (ax, (i, j)) in enumerate(zip(axes, ((0, 1), (0, 2)))):
                if trials is not None and len(trials):
                    ax.scatter(trials[:, i], trials[:, j], s=6, c="lightgray")
                k = 3 - i - j
                sc = ax.scatter(F[:, i], F[:, j], s=18, c=F[:, k], cmap="viridis", edgecolors="red", linewidths=0.8, gid=f"front-{n}")
                fig.colorbar(sc, ax=ax, label=labels[k])
                ax.set_xlabel(labels[i])
                ax.set_ylabel(labels[j])
        else:
            raise ValueError("front plots need two or three objectives")
        fig.tight_layout()
    return _save(fig, path)


def bar_chart(groups: dict, path, ylabel: str = "wall time [s]") -> Path:
    """Grouped bars: ``groups`` maps a series name to ``{category: value}``."""
    names = list(groups)
    cats = sorted({c for g in groups.values() for c in g})
    width = 0.8 / max(1, len(names))
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        x = np.arange(len(cats))
        for k, name in enumerate(names):
            ax.bar(x + k * width, [groups[name].get(c, 0.0) for c in cats], width, label=str(name))
        ax.set_xticks(x + width * (len(names) - 1) / 2, [str(c) for c in cats])
        ax.set_ylabel(ylabel)
        ax.legend(loc="best")
        fig.tight_layout()
    return _save(fig, path)
