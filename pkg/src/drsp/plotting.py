"""Convergence figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PANELS = (
    ("error_metric", "error metric"),
    ("consensus_error", "consensus error"),
    ("objective_at_iam", "objective at IAM"),
    ("stationarity", "stationarity measure"),
)


def _series(rows, key):
    k = np.array([r["k"] for r in rows], dtype=float)
    v = np.array([r[key] for r in rows], dtype=float)
    keep = np.isfinite(v)
    return k[keep], v[keep]


def _draw(ax, k, v, label=None):
    if v.size == 0:
        return
    if np.all(v > 0):
        ax.semilogy(k, v, label=label)
    else:
        ax.plot(k, v, label=label)


def plot_runs(runs, path, title=None):
    """One 2x2 figure; ``runs`` maps a label to a list of logged rows."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, (key, name) in zip(axes.ravel(), PANELS):
        for label, rows in runs.items():
            _draw(ax, *_series(rows, key), label=label)
        ax.set_title(name)
        ax.set_xlabel("iteration k")
        ax.grid(True, which="both", alpha=0.3)
    if len(runs) > 1:
        axes[0, 0].legend(fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectory(rows, path, title=None):
    return plot_runs({"run": rows}, path, title)
