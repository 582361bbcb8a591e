"""Matplotlib report figures written alongside the JSON-lines outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_OPTS = {"dpi": 110, "metadata": {"Software": "pcforge"}}


def save_loss_curve(path, steps, losses, lrs=None) -> None:
    """Training loss (log scale) with the learning-rate ramp on a twin axis."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("batch loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    if lrs is not None:
        ax2 = ax.twinx()
        ax2.plot(steps, lrs, lw=0.8, color="tab:orange", alpha=0.7)
        ax2.set_ylabel("learning rate", color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_metrics_chart(path, rows: list[dict]) -> None:
    """Per-pair Chamfer and F-Score bars for an evaluation batch."""
    ids = [r["id"] for r in rows]
    x = np.arange(len(ids))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(7, 1.0 * len(ids) + 4), 4))
    ax1.bar(x, [r["chamfer"] for r in rows], color="tab:blue")
    ax1.set_xticks(x, ids, rotation=60, ha="right", fontsize=7)
    ax1.set_ylabel("chamfer distance")
    ax2.bar(x, [r["fscore"] for r in rows], color="tab:green")
    ax2.set_xticks(x, ids, rotation=60, ha="right", fontsize=7)
    ax2.set_ylabel("f-score")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_cloud_views(path, cloud: np.ndarray) -> None:
    """Top view and side view scatter of a cloud, colored by height (-z)."""
    height = -cloud[:, 2]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4.2))
    s1 = ax1.scatter(cloud[:, 0], cloud[:, 1], c=height, s=1.5, cmap="viridis")
    ax1.set_title("top view")
    ax1.set_aspect("equal")
    ax1.invert_yaxis()
    ax2.scatter(cloud[:, 0], height, c=height, s=1.5, cmap="viridis")
    ax2.set_title("side view")
    ax2.set_aspect("equal")
    fig.colorbar(s1, ax=(ax1, ax2), label="height", shrink=0.8)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
