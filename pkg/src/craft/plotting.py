"""Figures written next to the tabular outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

# no timestamps or version strings, so reruns produce identical files
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def _smooth(x, width):
    if len(x) < width or width < 2:
        return np.asarray(x, dtype=float)
    kernel = np.ones(width) / width
    return np.convolve(x, kernel, mode="valid")


def plot_losses(d_losses, t_losses, path, smooth=25):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        if len(d_losses):
            ax.plot(d_losses, color="0.8", lw=0.5)
            ax.plot(t_losses, color="0.8", lw=0.5)
            off = (min(smooth, len(d_losses)) - 1) // 2 if len(d_losses) >= smooth else 0
            d, t = _smooth(d_losses, smooth), _smooth(t_losses, smooth)
            steps = np.arange(len(d)) + off
            ax.plot(steps, d, color="C3", label="discriminator loss")
            ax.plot(steps, t, color="C0", label="transformer loss (log(1 - D))")
            ax.axhline(2 * np.log(2), color="k", ls=":", lw=0.8, label="chance level (2 log 2)")
            ax.legend(frameon=False)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        return _save(fig, path)


def plot_score_map(records, path, title=None):
    xs = np.array([r.x for r in records])
    ys = np.array([r.y for r in records])
    sc = np.array([r.score for r in records])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 4.0))
        order = np.argsort(sc)  # high scores drawn on top
        im = ax.scatter(xs[order], ys[order], c=sc[order], s=6, cmap="viridis", vmin=0.0, vmax=1.0, lw=0)
        fig.colorbar(im, ax=ax, label="discriminator score")
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_report(report, path, metric=None):
    """Grouped bars: one group per density bin, one bar per algorithm."""
    metric = metric or ("oracle_error" if "oracle_error" in report.metrics else "mean_score")
    from .evaluate import ALGORITHMS, BINS

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        width = 0.8 / len(ALGORITHMS)
        x = np.arange(len(BINS))
        for j, algo in enumerate(ALGORITHMS):
            vals = [report.cell(algo, b)[metric] for b in BINS]
            ax.bar(x + (j - (len(ALGORITHMS) - 1) / 2) * width, vals, width, label=algo)
        ax.set_xticks(x, [f"{b} density" for b in BINS])
        ax.set_ylabel(metric.replace("_", " "))
        ax.legend(frameon=False, ncol=2)
        return _save(fig, path)
