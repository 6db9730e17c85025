"""Report figures written next to the CSV outputs."""

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_method_summary", "plot_pattern_evolution", "plot_training_curves", "plot_images"]

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_method_summary(rows, path, title="PSNR by method"):
    """Bar chart of mean PSNR per method with one-standard-error bars."""
    by_method = defaultdict(list)
    for _, method, value in rows:
        by_method[method].append(float(value))
    methods = list(by_method)
    means = [np.mean(by_method[m]) for m in methods]
    errs = [np.std(by_method[m]) / np.sqrt(len(by_method[m])) for m in methods]
    fig, ax = plt.subplots(figsize=(1.2 * len(methods) + 2, 3.5))
    ax.bar(range(len(methods)), means, yerr=errs, color="0.6", edgecolor="k", capsize=3)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods, rotation=30, ha="right")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(title)
    return _finish(fig, path)


def plot_pattern_evolution(patterns, path, title="Sampling pattern evolution"):
    """Steps down, k-space lines across; sampled lines in black."""
    grid = np.asarray(patterns, dtype=float)
    fig, ax = plt.subplots(figsize=(max(3, grid.shape[1] / 4), max(2, grid.shape[0] / 4)))
    ax.imshow(grid, cmap="gray_r", vmin=0, vmax=1, aspect="auto", interpolation="nearest")
    ax.set_xlabel("line index")
    ax.set_ylabel("lines acquired")
    ax.set_yticks(range(grid.shape[0]))
    ax.set_yticklabels([str(int(r.sum())) for r in grid])
    ax.set_title(title)
    return _finish(fig, path)


def plot_training_curves(rows, path):
    rounds = [int(r["round"]) for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, key in zip(axes, ("mean_reward", "recon_loss", "sample_loss")):
        ax.plot(rounds, [float(r[key]) for r in rows], "k.-", lw=1)
        ax.set_xlabel("round")
        ax.set_title(key)
    return _finish(fig, path)


def plot_images(images, path):
    """Show named ``(C, H, W)`` images side by side (first channel)."""
    fig, axes = plt.subplots(1, len(images), figsize=(2.5 * len(images), 2.8), squeeze=False)
    for ax, (name, img) in zip(axes[0], images.items()):
        ax.imshow(np.asarray(img)[0], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    return _finish(fig, path)
