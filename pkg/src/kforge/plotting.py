"""PNG renderings of the CSV reports. The CSVs stay the source of truth."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_search_trend(rows: list[dict], path) -> None:
    """Mean/min/max sampled validation accuracy per epoch, with the baseline."""
    epoch = np.array([r["epoch"] for r in rows], dtype=float)
    col = {k: np.array([r[k] for r in rows], dtype=float)
           for k in ("mean_acc", "min_acc", "max_acc", "baseline")}
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.fill_between(epoch, col["min_acc"], col["max_acc"], alpha=0.25, label="min-max")
    ax.plot(epoch, col["mean_acc"], marker="o", ms=3, label="mean")
    ax.plot(epoch, col["baseline"], ls="--", label="reward baseline")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0, 1)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_comparison(rows: list[dict], path) -> None:
    """Bar chart of test accuracy (percent) per model."""
    names = [r["model"] for r in rows]
    acc = [float(r["accuracy"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bars = ax.bar(names, acc, color=["C0"] * 6 + ["C3", "C2"][: max(0, len(rows) - 6)])
    for b, a in zip(bars, acc):
        ax.text(b.get_x() + b.get_width() / 2, a, f"{a:.2f}", ha="center", va="bottom",
                fontsize=7)
    ax.set_ylabel("test accuracy (%)")
    ax.set_ylim(0, 105)
    ax.tick_params(axis="x", labelrotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
