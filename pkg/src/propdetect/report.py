"""Figure rendering for the CLI report paths.

Figures are written next to the delimited output; nothing here feeds back
into the estimates.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_tradeoff_figure(points, path, title: str | None = None) -> None:
    """Delay-vs-false-alarm curve with 95% error bars, PFA on a log axis."""
    pfa = np.array([max(p.pfa, 1.0 / (10 * p.trials)) for p in points])
    add = np.array([p.add for p in points])
    add_ci = np.array([0.0 if np.isnan(p.add_ci) else p.add_ci for p in points])
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    order = np.argsort(pfa)
    ax.errorbar(pfa[order], add[order], yerr=add_ci[order],
                marker="o", capsize=3, lw=1.2)
    ax.set_xscale("log")
    ax.set_xlabel("probability of false alarm")
    ax.set_ylabel("average detection delay (slots)")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_value_table_figure(table, path) -> None:
    """Scatter of the converged cost-to-go over the simplex (two sensors only)."""
    if table.grid.L != 2:
        raise ValueError("value-table figure is only drawn for L = 2")
    pts = table.grid.points
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0), sharey=True)
    for ax, values, label in ((axes[0], table.J, "J"), (axes[1], table.A, "A")):
        sc = ax.scatter(pts[:, 1], pts[:, 2], c=values, s=18, cmap="viridis")
        ax.set_xlabel("q1")
        ax.set_title(label)
        fig.colorbar(sc, ax=ax)
    axes[0].set_ylabel("q2")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
