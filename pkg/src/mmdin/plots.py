"""Figure rendering for the evaluation reports (PNG, headless backend).

Each function mirrors one delimited artifact: overlaid ROC and PR curves,
the prediction scatter with its decision threshold, and a grouped bar
chart of the summary metrics table.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_BAR_METRICS = ("roc_auc", "pr_auc", "f1", "precision", "recall")


def save_roc_plot(curves, path):
    """curves: list of (name, fpr, tpr)."""
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, fpr, tpr in curves:
        ax.plot(fpr, tpr, linewidth=1.5, label=name)
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC curves")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_pr_plot(curves, path):
    """curves: list of (name, recalls, precisions)."""
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, recalls, precisions in curves:
        ax.plot(recalls, precisions, linewidth=1.5, label=name)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title("precision-recall curves")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_scatter_plot(jitter, scores, labels, path, threshold=None, title="predictions"):
    """Label-colored score scatter; x is uniform jitter for visibility."""
    fig, ax = plt.subplots(figsize=(6, 5))
    pos = [i for i, y in enumerate(labels) if y == 1]
    neg = [i for i, y in enumerate(labels) if y == 0]
    ax.scatter([jitter[i] for i in neg], [scores[i] for i in neg],
               s=4, alpha=0.35, color="#d62728", label="label 0", linewidths=0)
    ax.scatter([jitter[i] for i in pos], [scores[i] for i in pos],
               s=4, alpha=0.35, color="#1f77b4", label="label 1", linewidths=0)
    if threshold is not None:
        ax.axhline(threshold, color="black", linewidth=1.0, linestyle="--",
                   label=f"threshold {threshold:.4f}")
    ax.set_xlabel("jitter")
    ax.set_ylabel("predicted score")
    ax.set_title(title)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right", fontsize=8, markerscale=2.5)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metric_bars(rows, path):
    """Grouped bars per model; rows of (model, roc, pr, f1, precision, recall)."""
    fig, ax = plt.subplots(figsize=(7.5, 5))
    n_groups = len(_BAR_METRICS)
    n_models = max(len(rows), 1)
    width = 0.8 / n_models
    for mi, (model, *values) in enumerate(rows):
        xs = [g + mi * width for g in range(n_groups)]
        ax.bar(xs, values[:n_groups], width=width, label=model)
    ax.set_xticks([g + 0.4 - width / 2 for g in range(n_groups)])
    ax.set_xticklabels(_BAR_METRICS)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("value")
    ax.set_title("summary metrics by model")
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
