"""Overlay plots of training runs, drawn from metrics CSV files only."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError  # noqa: E402
from .training import read_metrics  # noqa: E402

PANELS = (
    ("train", "epoch_sec", "seconds per epoch"),
    ("train", "train_loss", "loss"),
    ("train", "train_ppl", "perplexity"),
    ("valid", "avg_bleu", "average BLEU"),
    ("valid", "test_loss", "loss"),
    ("valid", "test_ppl", "perplexity"),
)


def plot_overlay(runs: Mapping[str, str | Path], out_path: str | Path) -> Path:
    """One vector figure, every run overlaid on each of six panels.

    ``runs`` maps a legend label to a metrics CSV.
    """
    if not runs:
        raise ConfigError("nothing to plot")
    data = {label: read_metrics(path) for label, path in runs.items()}
    fig, axes = plt.subplots(2, 3, figsize=(13, 7))
    for ax, (split, field, title) in zip(axes.flat, PANELS):
        for label, records in data.items():
            epochs = [r.epoch for r in records]
            values = [getattr(r, field) for r in records]
            ax.plot(epochs, values, label=label, linewidth=1.2)
        if field.endswith("ppl"):
            ax.set_yscale("log")
        ax.set_title(f"{split}: {title}", fontsize=10)
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
    axes.flat[0].legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path
