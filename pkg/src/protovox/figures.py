"""Matplotlib renderings of the experiment results, written as PNG files.

Uses the Agg backend so figure output works on headless machines. Each
function writes one file and returns its path.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be set first


def plot_loss_curve(curve, path: str | Path) -> Path:
    """Training loss parts over steps from a list of step records."""
    path = Path(path)
    steps = [r.step for r in curve]
    fig, ax = plt.subplots(figsize=(7, 4))
    for name in ("l_tts", "l_dys", "l_adv", "total"):
        ax.plot(steps, [getattr(r, name) for r in curve], label=name, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("Training losses")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(result, path: str | Path) -> Path:
    """WER vs augmentation ratio, one line per held-out speaker plus the mean."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    speakers = sorted({s for cells in result.wer.values() for s in cells})
    for speaker in speakers:
        ys = [result.wer[r].get(speaker) for r in result.ratios]
        ax.plot(result.ratios, ys, marker="o", linewidth=1.0, alpha=0.6, label=speaker)
    means = [result.mean_wer(r) for r in result.ratios]
    ax.plot(result.ratios, means, marker="s", linewidth=2.2, color="black", label="mean")
    ax.set_xlabel("synthetic data ratio")
    ax.set_ylabel("WER")
    ax.set_title("Recognition error vs augmentation ratio")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_substitution(result, path: str | Path) -> Path:
    """Grouped bars: WER per adaptation condition and held-out speaker."""
    path = Path(path)
    speakers = sorted({s for cells in result.wer.values() for s in cells})
    conditions = list(result.CONDITIONS)
    width = 0.8 / max(1, len(conditions))
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, condition in enumerate(conditions):
        xs = [i + j * width for i in range(len(speakers))]
        ys = [result.wer.get(condition, {}).get(s, 0.0) for s in speakers]
        ax.bar(xs, ys, width=width, label=condition)
    ax.set_xticks([i + width for i in range(len(speakers))])
    ax.set_xticklabels(speakers)
    ax.set_ylabel("WER")
    ax.set_title("Adaptation data source vs recognition error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_similarity(
    method_rows: list[tuple[str, dict[str, float | None]]],
    speakers: tuple[str, ...],
    path: str | Path,
) -> Path:
    """Grouped bars: reconstruction speaker similarity per method and speaker."""
    path = Path(path)
    width = 0.8 / max(1, len(method_rows))
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, (label, cells) in enumerate(method_rows):
        xs = [i + j * width for i in range(len(speakers))]
        ys = [cells.get(s) or 0.0 for s in speakers]
        ax.bar(xs, ys, width=width, label=label)
    ax.set_xticks([i + width for i in range(len(speakers))])
    ax.set_xticklabels(speakers)
    ax.set_ylabel("mean cosine similarity")
    ax.set_title("Speaker similarity of reconstructions")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
