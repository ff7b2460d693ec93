"""Binary classification quality metrics and report export.

ROC-AUC is the rank statistic (ties get half credit), which equals the
trapezoidal area under the ROC curve.  PR-AUC is average precision, the
step-sum of precision over recall increments taken at every distinct
score threshold in descending order.  Thresholded metrics count a row as
predicted positive exactly when score >= threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class UndefinedMetricError(ValueError):
    """Metric has no value on this input (e.g. one class only)."""


class ScoredSet:
    """Parallel scores and 0/1 labels; the unit every metric consumes."""

    __slots__ = ("scores", "labels")

    def __init__(self, scores, labels):
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
        if scores.ndim != 1 or labels.ndim != 1 or scores.shape != labels.shape:
            raise ValueError(
                f"scores and labels must be equal-length vectors, got "
                f"{scores.shape} and {labels.shape}"
            )
        if scores.size == 0:
            raise ValueError("a scored set needs at least one element")
        if not np.all(np.isfinite(scores)) or scores.min() < 0.0 or scores.max() > 1.0:
            raise ValueError("scores must be finite probabilities in [0, 1]")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        self.scores = scores
        self.labels = labels.astype(np.int64)

    def __len__(self):
        return self.scores.size

    @property
    def positives(self):
        return int(self.labels.sum())

    @property
    def negatives(self):
        return int(len(self) - self.labels.sum())


def _require_both_classes(scored, metric):
    if scored.positives == 0 or scored.negatives == 0:
        raise UndefinedMetricError(
            f"{metric} is undefined when only one class is present "
            f"({scored.positives} positives, {scored.negatives} negatives)"
        )


def _average_ranks(values):
    """1-based ranks; tied values share the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    i, n = 0, values.size
    while i < n:
        j = i
        while j < n and values[order[j]] == values[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def roc_auc(scored):
    """Probability a random positive outscores a random negative (ties: 1/2)."""
    _require_both_classes(scored, "roc_auc")
    ranks = _average_ranks(scored.scores)
    npos = scored.positives
    pos_rank_sum = float(ranks[scored.labels == 1].sum())
    return (pos_rank_sum - npos * (npos + 1) / 2.0) / (npos * scored.negatives)


def _threshold_counts(scored):
    """Cumulative TP/FP after each distinct score, descending.

    Returns (thresholds, tp, fp) where row i covers 'predict positive at
    score >= thresholds[i]'.
    """
    order = np.argsort(-scored.scores, kind="mergesort")
    s = scored.scores[order]
    y = scored.labels[order]
    tp_cum = np.cumsum(y)
    fp_cum = np.cumsum(1 - y)
    last_of_group = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    return s[last_of_group], tp_cum[last_of_group], fp_cum[last_of_group]


def roc_curve(scored):
    """(fpr, tpr) arrays over descending thresholds, anchored at (0,0)."""
    _require_both_classes(scored, "roc_curve")
    _, tp, fp = _threshold_counts(scored)
    fpr = np.r_[0.0, fp / scored.negatives]
    tpr = np.r_[0.0, tp / scored.positives]
    return fpr, tpr


def pr_curve_and_auc(scored):
    """((recalls, precisions), average_precision).

    One curve point per distinct threshold, descending.  The step-sum
    is accumulated left to right so the value is reproducible exactly.
    """
    _require_both_classes(scored, "pr_curve")
    _, tp, fp = _threshold_counts(scored)
    npos = scored.positives
    recalls = np.empty(tp.size)
    precisions = np.empty(tp.size)
    ap = 0.0
    prev_recall = 0.0
    for i in range(tp.size):
        recall = tp[i] / npos
        precision = tp[i] / (tp[i] + fp[i])
        recalls[i] = recall
        precisions[i] = precision
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return (recalls, precisions), ap


@dataclass(frozen=True)
class ThresholdReport:
    """Confusion counts and derived rates at one decision threshold."""

    threshold: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def _rates(tp, fp, tn, fn, threshold):
    predicted_pos = tp + fp
    actual_pos = tp + fn
    precision = tp / predicted_pos if predicted_pos else 0.0
    recall = tp / actual_pos if actual_pos else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ThresholdReport(float(threshold), precision, recall, f1,
                           int(tp), int(fp), int(tn), int(fn))


def confusion_at(scored, threshold):
    """Counts and rates with 'positive' meaning score >= threshold.

    Precision (and recall) default to 0 when their denominator is empty;
    no NaN ever escapes.
    """
    pred = scored.scores >= threshold
    tp = int(np.sum(pred & (scored.labels == 1)))
    fp = int(np.sum(pred & (scored.labels == 0)))
    fn = int(np.sum(~pred & (scored.labels == 1)))
    tn = int(np.sum(~pred & (scored.labels == 0)))
    return _rates(tp, fp, tn, fn, threshold)


def best_f1_threshold(scored):
    """Scan every distinct score as a threshold; return the best report.

    Ties on F1 resolve to the lowest optimal threshold among candidates.
    """
    _require_both_classes(scored, "best_f1_threshold")
    thresholds, tp, fp = _threshold_counts(scored)
    npos = scored.positives
    nneg = scored.negatives
    best = None
    for i in range(thresholds.size):
        report = _rates(tp[i], fp[i], nneg - fp[i], npos - tp[i], thresholds[i])
        if best is None or report.f1 >= best.f1:  # descending scan: later = lower threshold
            best = report
    return best


@dataclass(frozen=True)
class EvalReport:
    """Threshold-free areas plus confusions at best-F1 and at 0.5."""

    roc_auc: float
    pr_auc: float
    best: ThresholdReport
    at_half: ThresholdReport


def evaluate_scored(scored):
    """Full evaluation of one scored set."""
    (_, _), ap = pr_curve_and_auc(scored)
    return EvalReport(
        roc_auc=roc_auc(scored),
        pr_auc=ap,
        best=best_f1_threshold(scored),
        at_half=confusion_at(scored, 0.5),
    )


# -- delimited report files -------------------------------------------------------

METRICS_HEADER = ["model", "roc_auc", "pr_auc", "f1", "precision", "recall", "threshold"]


def _fmt6(x):
    return f"{x:.6f}"


def _fmt9(x):
    return f"{x:.9g}"


def write_metrics_csv(path, rows):
    """Rows of (model, roc_auc, pr_auc, f1, precision, recall, threshold)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for model, *values in rows:
            writer.writerow([model] + [_fmt6(v) for v in values])


def _metric_row(name, report, point):
    return (name, report.roc_auc, report.pr_auc,
            point.f1, point.precision, point.recall, point.threshold)


def export_reports(out_dir, entries, jitter_seed=0, scatter_cap=20000):
    """Write the delimited evaluation artifacts for one or more models.

    ``entries`` is a list of (name, ScoredSet, EvalReport).  Produces
    metrics.csv (best-F1 operating point) and metrics_at_0.5.csv, plus
    per-model roc_/pr_/scatter_ CSVs.  Scatter rows beyond ``scatter_cap``
    are subsampled with a generator seeded by ``jitter_seed``, never
    upsampled.  Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    best_rows = [_metric_row(name, report, report.best) for name, _, report in entries]
    half_rows = [_metric_row(name, report, report.at_half) for name, _, report in entries]
    for fname, rows in (("metrics.csv", best_rows), ("metrics_at_0.5.csv", half_rows)):
        path = out / fname
        write_metrics_csv(path, rows)
        written.append(path)

    for name, scored, _ in entries:
        fpr, tpr = roc_curve(scored)
        path = out / f"roc_{name}.csv"
        _write_curve(path, "fpr,tpr", fpr, tpr)
        written.append(path)

        (recalls, precisions), _ = pr_curve_and_auc(scored)
        path = out / f"pr_{name}.csv"
        _write_curve(path, "recall,precision", recalls, precisions)
        written.append(path)

        rng = np.random.default_rng(jitter_seed)
        n = len(scored)
        if n > scatter_cap:
            pick = np.sort(rng.choice(n, size=scatter_cap, replace=False))
        else:
            pick = np.arange(n)
        jitter = rng.random(pick.size)
        path = out / f"scatter_{name}.csv"
        lines = ["jitter_x,score,label"]
        for j, i in zip(jitter, pick):
            lines.append(f"{_fmt9(j)},{_fmt9(scored.scores[i])},{scored.labels[i]}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def _write_curve(path, header, xs, ys):
    lines = [header]
    for x, y in zip(xs, ys):
        lines.append(f"{_fmt9(x)},{_fmt9(y)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
