"""Matplotlib figure rendering for the CLI report paths.

Figures are written next to the delimited output: a loss curve after training,
a metric bar chart after scoring, and per-word attention heatmaps.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def loss_curve(history, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(history) + 1), history, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean NLL per token")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def score_bars(report_dict, path):
    names = list(report_dict)
    values = [report_dict[k] for k in names]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(names, values, color="#4878cf")
    ax.set_ylabel("score")
    ax.set_title("caption metrics")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def attention_figure(image_id, words, alphas, grid_shape, out_dir):
    """One figure per image: a heatmap panel per generated word."""
    h, w = grid_shape
    n = len(words)
    if n == 0:
        return None
    cols = min(n, 5)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows),
                             squeeze=False)
    for idx in range(rows * cols):
        ax = axes[idx // cols][idx % cols]
        ax.axis("off")
        if idx < n:
            ax.imshow(np.asarray(alphas[idx]).reshape(h, w),
                      cmap="gray", vmin=0.0)
            ax.set_title(words[idx], fontsize=9)
    fig.tight_layout()
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{image_id}.attention.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
