"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss(steps: Sequence[int], losses: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("L1 loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_eval(rows: Sequence[tuple[str, float, float]], path: str | Path) -> Path:
    names = [r[0] for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(rows) + 2), 3.5))
    ax.bar([i - 0.2 for i in x], [r[1] for r in rows], width=0.4, label="noisy")
    ax.bar([i + 0.2 for i in x], [r[2] for r in rows], width=0.4, label="denoised")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("PSNR (dB)")
    ax.legend(frameon=False)
    return _finish(fig, path)


def plot_bench(rows: Sequence[dict], path: str | Path) -> Path:
    """One panel per cost column against wavelet level."""
    levels = [r["level"] for r in rows]
    columns = [("flops", "MACs"), ("footprint", "live activations"), ("median_seconds", "forward time (s)")]
    fig, axes = plt.subplots(1, len(columns), figsize=(10, 3.2))
    for ax, (key, label) in zip(axes, columns):
        ax.plot(levels, [r[key] for r in rows], marker="o")
        ax.set_xticks(levels)
        ax.set_xlabel("wavelet level")
        ax.set_ylabel(label)
        ax.set_yscale("log")
        ax.grid(alpha=0.3)
    return _finish(fig, path)
