"""Figure rendering for training curves, metric summaries, and attention maps.

All renderers write PNG files next to the delimited reports; matplotlib is
imported lazily with the Agg backend so headless runs work.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_attention_heatmap(matrix: np.ndarray, path, title=None, xlabel="decode step", ylabel="triplet"):
    """Grayscale attention map: rows are triplets in input order, columns are
    decode steps, each column scaled to [0, 1] before rendering."""
    plt = _plt()
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("attention matrix must be 2-D and non-empty")
    col_max = m.max(axis=0, keepdims=True)
    col_max[col_max == 0] = 1.0
    scaled = m / col_max
    fig, ax = plt.subplots(figsize=(max(3.0, 0.35 * m.shape[1] + 1.5), max(3.0, 0.08 * m.shape[0] + 1.0)))
    ax.imshow(scaled, cmap="gray", aspect="auto", interpolation="nearest")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_attention_csv(matrix: np.ndarray, path, row_labels=None):
    """Attention matrix as CSV, one row per triplet, one column per decode step."""
    m = np.asarray(matrix, dtype=float)
    lines = ["row," + ",".join(f"step_{j}" for j in range(m.shape[1]))]
    for i in range(m.shape[0]):
        label = row_labels[i] if row_labels is not None else f"row_{i}"
        lines.append(label + "," + ",".join(f"{v:.10g}" for v in m[i]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def save_loss_curve(records, path):
    """Training loss and validation EM/GM over epochs."""
    plt = _plt()
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.loss for r in records], label="train loss", color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.val_em for r in records], label="val EM", color="tab:green")
    ax2.plot(epochs, [r.val_gm for r in records], label="val GM", color="tab:orange")
    ax2.set_ylabel("fraction")
    ax2.set_ylim(-0.05, 1.05)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_bars(reports, path):
    """Grouped EM/F1/GM percentage bars per split; mean ED annotated."""
    plt = _plt()
    names = [r.name for r in reports]
    x = np.arange(len(names))
    width = 0.25
    fig, ax = plt.subplots(figsize=(max(5, 2 * len(names)), 4))
    ax.bar(x - width, [100 * r.em for r in reports], width, label="EM %")
    ax.bar(x, [100 * r.f1 for r in reports], width, label="F1 %")
    ax.bar(x + width, [100 * r.gm for r in reports], width, label="GM %")
    for i, r in enumerate(reports):
        ax.text(i, 2, f"ED={r.ed:.2f}", ha="center", fontsize=8)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 105)
    ax.set_ylabel("percent")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
