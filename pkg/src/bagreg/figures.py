"""Figure rendering for the report path.

Two figures cover the usual questions about a fitted model: a per-bag-size
scatter of predicted versus true labels colored by predictive sd, and a bar
chart of aggregated metrics across seeds.  Rendering always goes to files
(Agg backend), next to the CSVs they are drawn from.
"""

from __future__ import annotations

from typing import List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import UNIFORM_REFERENCE_NLL
from .models import KINDS


def prediction_figure(rows: List[dict], path, title: Optional[str] = None):
    """Scatter predicted vs true label, one panel per bag size, colored by sd.

    Rows are prediction-dump records; unlabeled bags are skipped.  Returns the
    path written, or None when nothing was plottable.
    """
    rows = [r for r in rows if r["y_true"] is not None]
    if not rows:
        return None
    sizes = sorted({r["n"] for r in rows})
    has_sd = all(r["y_sd"] is not None for r in rows)
    sd_lo = min((r["y_sd"] for r in rows), default=0.0) if has_sd else None
    sd_hi = max((r["y_sd"] for r in rows), default=1.0) if has_sd else None

    fig, axes = plt.subplots(
        1, len(sizes), figsize=(3.2 * len(sizes), 3.4), sharex=True, sharey=True, squeeze=False
    )
    last = None
    for ax, n in zip(axes[0], sizes):
        sub = [r for r in rows if r["n"] == n]
        x = np.array([r["y_true"] for r in sub])
        y = np.array([r["y_pred"] for r in sub])
        if has_sd:
            c = np.array([r["y_sd"] for r in sub])
            last = ax.scatter(x, y, c=c, s=9, cmap="viridis", vmin=sd_lo, vmax=sd_hi)
        else:
            ax.scatter(x, y, s=9, color="tab:blue")
        lo = min(x.min(), y.min())
        hi = max(x.max(), y.max())
        ax.plot([lo, hi], [lo, hi], color="gray", lw=0.8, zorder=0)
        ax.set_title(f"N = {n}")
        ax.set_xlabel("true label")
    axes[0][0].set_ylabel("predicted label")
    if title:
        fig.suptitle(title)
    if last is not None:
        fig.colorbar(last, ax=axes[0].tolist(), label="predictive sd", shrink=0.85)
    else:
        fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _model_order(names):
    known = [k for k in KINDS if k in names]
    return known + sorted(set(names) - set(known))


def metric_figure(summary: dict, path):
    """Bar chart of aggregated MSE and NLL per model with sd error bars."""
    names = _model_order(summary["models"].keys())
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for ax, metric in zip(axes, ("mse", "nll")):
        stats = [(n, summary["models"][n].get(metric)) for n in names]
        stats = [(n, s) for n, s in stats if s is not None]
        if not stats:
            ax.set_axis_off()
            continue
        labels = [n for n, _ in stats]
        means = [s["mean"] for _, s in stats]
        sds = [s["sd"] for _, s in stats]
        xs = np.arange(len(labels))
        ax.bar(xs, means, yerr=sds, capsize=3, color="tab:blue", alpha=0.85)
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel(metric.upper())
        if metric == "nll":
            ax.axhline(UNIFORM_REFERENCE_NLL, ls="--", lw=0.9, color="gray", label="uniform")
            ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
