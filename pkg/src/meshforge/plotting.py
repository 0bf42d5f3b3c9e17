"""Report figures written next to the CLI's JSON output.

Matplotlib is imported lazily with the Agg backend so the library never needs
a display.
"""

from __future__ import annotations

import numpy as np

_STYLE = {
    "font.size": 8,
    "axes.labelsize": 8,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _fig_size(fraction=1.0, rows=1, cols=1):
    width = 6.5 * fraction
    golden = (5**0.5 - 1) / 2
    return width, width * golden * rows / cols


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update(_STYLE)
    return plt


def plot_extraction(stats: dict, path) -> None:
    """Active cells and field queries per level, dense equivalent for scale."""
    plt = _pyplot()
    active = stats["per_level_active"]
    queries = stats["per_level_queries"]
    levels = np.arange(len(active))
    fig, ax = plt.subplots(1, 2, figsize=_fig_size(1.0, 1, 2))
    ax[0].bar(levels, active, color="tab:blue")
    ax[0].set_xlabel("level")
    ax[0].set_ylabel("active cells")
    ax[0].set_yscale("log")
    ax[1].bar(levels, queries, color="tab:orange", label="per level")
    ax[1].axhline(stats["dense_equivalent"], color="k", ls="--", lw=0.8, label="dense total")
    ax[1].axhline(stats["queries_total"], color="tab:red", lw=0.8, label="sparse total")
    ax[1].set_yscale("log")
    ax[1].set_xlabel("level")
    ax[1].set_ylabel("field queries")
    ax[1].legend(frameon=False)
    fig.suptitle(f"reduction {stats['reduction']:.1f}x")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_samples(groups: dict, path, max_points: int = 20000) -> None:
    """Top-down scatter of each sample group (SPACE coloured by label)."""
    plt = _pyplot()
    names = list(groups)
    fig, axes = plt.subplots(1, len(names), figsize=_fig_size(1.0, 1, len(names)), squeeze=False)
    for ax, name in zip(axes[0], names):
        s = groups[name]
        p = s.points[:max_points]
        if s.labels is not None:
            lab = s.labels[:max_points]
            ax.scatter(p[~lab, 0], p[~lab, 1], s=0.2, c="0.75", lw=0)
            ax.scatter(p[lab, 0], p[lab, 1], s=0.2, c="tab:blue", lw=0)
        else:
            ax.scatter(p[:, 0], p[:, 1], s=0.2, c=p[:, 2], cmap="viridis", lw=0)
        ax.set_title(f"{s.group} (n={len(s)})")
        ax.set_aspect("equal")
        ax.set_xlim(-1.05, 1.05)
        ax.set_ylim(-1.05, 1.05)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
