"""Matplotlib figure rendering for report and training artifacts."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from sqlfeedback.metrics import MetricsReport  # noqa: E402


def metrics_figure(result: MetricsReport, path: str | Path,
                   title: str = "Error correction metrics") -> Path:
    """Bar chart of the metric suite, saved next to the report files."""
    labels = ["Corr Acc.", "Progress", "Edit-Dec", "Edit-Inc"]
    values = [result.correction_accuracy, result.progress,
              result.edit_dec, result.edit_inc]
    if result.e2e is not None:
        labels.append("E2E")
        values.append(result.e2e)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    bars = ax.bar(labels, values, color="#4878a8")
    ax.bar_label(bars, fmt="%.2f", fontsize=8)
    ax.set_ylabel("%")
    ax.set_title(f"{title} (n={result.n})")
    ax.axhline(0, color="black", linewidth=0.6)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def training_curve_figure(log: Sequence[dict], path: str | Path) -> Path:
    """Loss (and optional dev MRR) per epoch."""
    epochs = [entry["epoch"] for entry in log]
    losses = [entry["mean_loss"] for entry in log]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(epochs, losses, color="#4878a8", label="mean loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    mrr_values = [(entry["epoch"], entry["mrr_dev"]) for entry in log
                  if entry.get("mrr_dev") is not None]
    if mrr_values:
        twin = ax.twinx()
        twin.plot([e for e, _ in mrr_values], [v for _, v in mrr_values],
                  color="#b05030", label="dev MRR")
        twin.set_ylabel("dev MRR")
    ax.set_title("Evaluator training")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def rank_histogram_figure(ranks: Sequence[int], path: str | Path,
                          mrr_value: Optional[float] = None) -> Path:
    """Distribution of positive ranks from an MRR evaluation."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    top = max(ranks) if ranks else 1
    ax.hist(ranks, bins=range(1, top + 2), color="#4878a8", align="left",
            rwidth=0.9)
    ax.set_xlabel("rank of positive")
    ax.set_ylabel("count")
    title = "Positive ranks"
    if mrr_value is not None:
        title += f" (MRR={mrr_value:.3f})"
    ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
