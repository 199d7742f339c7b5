"""Figures written next to JSON reports.

All functions take output paths and close their figures; nothing is shown
interactively.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 11,
    "axes.titlesize": 12,
    "axes.labelsize": 11,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _figure(width=6.0, height=None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    return plt.subplots(figsize=(width, height or width * golden))


def _save(fig, path):
    # no metadata so reruns give identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return str(path)


def plot_training_curve(log, path, title="touch-up training"):
    """Mean epoch loss and validation score on twin axes; best epoch marked."""
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        epochs = [r.epoch for r in log.epochs]
        ax.plot(epochs, [r.loss for r in log.epochs], color="tab:blue", marker="o", ms=3)
        ax.set_xlabel("epoch")
        ax.set_ylabel("structure loss", color="tab:blue")
        ax2 = ax.twinx()
        ax2.plot(epochs, [r.valid_score for r in log.epochs], color="tab:orange", marker="s", ms=3)
        ax2.set_ylabel("validation score", color="tab:orange")
        ax2.spines["right"].set_visible(True)
        if log.best_epoch > 0:
            ax.axvline(log.best_epoch, color="grey", ls="--", lw=1)
        ax.set_title(title)
        return _save(fig, path)


def plot_homophily(before: float | None, after: float | None, path):
    """Bar chart of feature homophily before and after touch-up."""
    with plt.rc_context(STYLE):
        fig, ax = _figure(4.0, 3.2)
        vals = [before or 0.0, after or 0.0]
        bars = ax.bar(["base", "touched-up"], vals, color=["tab:grey", "tab:green"])
        for bar, v in zip(bars, vals):
            ax.annotate(f"{v:.3f}", (bar.get_x() + bar.get_width() / 2, v),
                        ha="center", va="bottom" if v >= 0 else "top")
        ax.axhline(0, color="black", lw=0.8)
        ax.set_ylim(min(-0.1, min(vals) - 0.1), 1.05)
        ax.set_ylabel("feature homophily $h_f$")
        return _save(fig, path)


def plot_metric_comparison(rows: dict, path, metric_names=("mrr", "hits@1", "hits@10")):
    """Grouped bars: ``rows`` maps a setting name to ``{metric: value}``."""
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        names = list(rows)
        width = 0.8 / max(1, len(names))
        for i, name in enumerate(names):
            xs = [j + i * width for j in range(len(metric_names))]
            ax.bar(xs, [rows[name].get(m) or 0.0 for m in metric_names], width, label=name)
        ax.set_xticks([j + width * (len(names) - 1) / 2 for j in range(len(metric_names))])
        ax.set_xticklabels(metric_names)
        ax.set_ylim(0, 1)
        ax.legend()
        return _save(fig, path)
