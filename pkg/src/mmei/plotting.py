"""Figures written next to the CSV reports."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curves(records: Sequence, path) -> None:
    """Train/validation total loss per epoch, with the two components dashed."""
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(epochs, [r.train_total for r in records], color="C0", label="train total")
    ax.plot(epochs, [r.val_total for r in records], color="C1", label="val total")
    ax.plot(epochs, [r.train_recog for r in records], color="C0", ls="--", lw=0.8, label="train recog")
    ax.plot(epochs, [r.train_rank for r in records], color="C0", ls=":", lw=0.8, label="train rank")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_feedback(mean_rank_history: Sequence[float], path, favored: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(range(len(mean_rank_history)), mean_rank_history, color="C2")
    ax.set_xlabel("round")
    ax.set_ylabel("mean rank of favored items")
    if favored:
        ax.set_title(f"favored class: {favored}")
    ax.invert_yaxis()
    _save(fig, path)
