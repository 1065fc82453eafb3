"""Static figures: accuracy curves, CSS heatmaps, gate-ratio curves and the
ablation bar chart."""
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from gabc_ssda.evaluation import CssMatrix  # noqa: E402


def _save(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_accuracy_curves(logs: Mapping[str, pd.DataFrame], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, log in logs.items():
        ax.plot(log["epoch"], 100.0 * log["target_accuracy"], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("target accuracy (%)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize="small")
    _save(fig, path)


def plot_css_heatmap(css: CssMatrix, path: str, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    image = ax.imshow(
        np.ma.masked_invalid(css.scores), vmin=0.0, vmax=1.0, cmap="viridis"
    )
    ax.set_xlabel("labeled class c'")
    ax.set_ylabel("unlabeled target class c")
    ticks = np.arange(css.num_classes)
    ax.set_xticks(ticks)
    ax.set_yticks(ticks)
    for (row, column), value in np.ndenumerate(css.scores):
        if np.isfinite(value):
            ax.text(column, row, f"{value:.2f}", ha="center", va="center", fontsize=7)
    if title:
        ax.set_title(title)
    fig.colorbar(image, ax=ax, fraction=0.046)
    _save(fig, path)


def plot_gate_ratios(log: pd.DataFrame, path: str) -> None:
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
    left.plot(log["epoch"], log["node_ratio"], label="g_i = 1")
    left.plot(log["epoch"], log["combined_ratio"], label="g_i^j = 1")
    left.set_xlabel("epoch")
    left.set_ylabel("fraction")
    left.legend(fontsize="small")
    for column, label in (
        ("similar_high", "a=1, dot>kappa"),
        ("similar_low", "a=1, dot<=kappa"),
        ("dissimilar_high", "a=0, dot>kappa"),
    ):
        right.plot(log["epoch"], log[column], label=label)
    right.set_xlabel("epoch")
    right.set_ylabel("fraction of pairs")
    right.legend(fontsize="small")
    for ax in (left, right):
        ax.grid(alpha=0.3)
    _save(fig, path)


def plot_ablation(table: pd.DataFrame, path: str) -> None:
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(table)), 4))
    positions = np.arange(len(table))
    ax.bar(positions, 100.0 * table["mean"], yerr=100.0 * table["std"], capsize=3)
    ax.set_xticks(positions)
    ax.set_xticklabels(table["row"], rotation=45)
    ax.set_ylabel("mean target accuracy (%)")
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)
