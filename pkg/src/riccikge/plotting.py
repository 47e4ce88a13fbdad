"""Figures written next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _minmax(y):
    y = np.asarray(y, dtype=float)
    span = y.max() - y.min()
    return np.zeros_like(y) if span == 0 else (y - y.min()) / span


def figure_preamble(width=6.0, aspect=0.62):
    fig, ax = plt.subplots(figsize=(width, width * aspect))
    ax.grid(alpha=0.3)
    return fig, ax


def figure_epilogue(fig, ax, path, x_label="", y_label="", title=""):
    if x_label:
        ax.set_xlabel(x_label)
    if y_label:
        ax.set_ylabel(y_label)
    if title:
        ax.set_title(title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_normalized_curves(curve_log, path, names=("loss", "kappa_var")):
    """Overlay the named series of a :class:`CurveLog`, each min-max scaled to [0, 1]."""
    fig, ax = figure_preamble()
    for name in names:
        if name not in curve_log.columns:
            continue
        t, y = curve_log.series(name)
        if len(t):
            ax.plot(t, _minmax(y), marker="o" if len(t) < 30 else None, ms=3, label=name)
    return figure_epilogue(fig, ax, path, "time", "normalised value")


def plot_contraction(report, path):
    """Observed ``|d^k - d*|`` against the linear-convergence bound (log scale)."""
    fig, ax = figure_preamble()
    k = np.arange(len(report.errors))
    ax.semilogy(k, np.maximum(report.errors, 1e-300), label="|d^k - d*|")
    ax.semilogy(k, np.maximum(report.bounds, 1e-300), "--", label=f"bound (q = {report.q:.3g})")
    return figure_epilogue(fig, ax, path, "step k", "distance error")
