"""Metric oracles: pair counting for ROC-AUC, threshold enumeration for AP."""

import numpy as np
import pytest

from mmdin import metrics as mx
from mmdin.metrics import ScoredSet, UndefinedMetricError

# Frozen by hand for scores [0.1, 0.4, 0.35, 0.8], labels [0, 0, 1, 1]:
# positive-negative pairs won: (0.35,0.1), (0.8,0.1), (0.8,0.4) of 4 -> 3/4.
HAND_AUC = 0.75
# Same set, descending sweep: R=0.5@P=1 then R=1@P=2/3 -> 0.5 + 0.5 * 2/3.
HAND_AP = 0.8333333333333333


def hand_set():
    return ScoredSet([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])


def pair_count_auc(scores, labels):
    """Independent O(n^2) oracle: wins + half-credit ties over all pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def enumerate_ap(scores, labels):
    """Independent AP oracle: step sum over descending distinct thresholds."""
    uniq = sorted(set(scores), reverse=True)
    npos = sum(labels)
    ap = 0.0
    prev_recall = 0.0
    for t in uniq:
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        recall = tp / npos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def random_sets(count, max_n=200, seed=0, min_n=2):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(min_n, max_n + 1))
        # rounding forces plenty of exact score ties
        scores = np.round(rng.random(n), 1)
        labels = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(np.int64)
        if 0 < labels.sum() < n:
            out.append(ScoredSet(scores, labels))
    return out


# -- validation -----------------------------------------------------------------


def test_scored_set_validation():
    with pytest.raises(ValueError):
        ScoredSet([0.5, 1.5], [0, 1])
    with pytest.raises(ValueError):
        ScoredSet([0.5, -0.1], [0, 1])
    with pytest.raises(ValueError):
        ScoredSet([0.5, np.nan], [0, 1])
    with pytest.raises(ValueError):
        ScoredSet([0.5], [2])
    with pytest.raises(ValueError):
        ScoredSet([0.5, 0.6], [1])
    with pytest.raises(ValueError):
        ScoredSet([], [])
    with pytest.raises(ValueError):
        ScoredSet([[0.5]], [[1]])
    s = ScoredSet([0.2, 0.8, 0.5], [0, 1, 1])
    assert len(s) == 3 and s.positives == 2 and s.negatives == 1


def test_one_class_inputs_are_undefined():
    ones = ScoredSet([0.2, 0.8], [1, 1])
    for fn in (mx.roc_auc, mx.best_f1_threshold, mx.roc_curve,
               mx.pr_curve_and_auc, mx.evaluate_scored):
        with pytest.raises(UndefinedMetricError):
            fn(ones)


# -- ROC-AUC -----------------------------------------------------------------------


def test_roc_auc_hand_case_and_extremes():
    assert mx.roc_auc(hand_set()) == HAND_AUC
    assert mx.roc_auc(ScoredSet([0.1, 0.9], [0, 1])) == 1.0
    assert mx.roc_auc(ScoredSet([0.9, 0.1], [0, 1])) == 0.0
    assert mx.roc_auc(ScoredSet([0.5, 0.5], [0, 1])) == 0.5


def test_roc_auc_matches_pair_counting_with_ties():
    for scored in random_sets(40, seed=1):
        expect = pair_count_auc(scored.scores.tolist(), scored.labels.tolist())
        assert abs(mx.roc_auc(scored) - expect) < 1e-12


def test_roc_curve_hand_points_and_shape():
    fpr, tpr = mx.roc_curve(hand_set())
    assert np.array_equal(fpr, [0.0, 0.0, 0.5, 0.5, 1.0])
    assert np.array_equal(tpr, [0.0, 0.5, 0.5, 1.0, 1.0])


def test_roc_curve_trapezoid_area_equals_rank_auc():
    for scored in random_sets(25, seed=2):
        fpr, tpr = mx.roc_curve(scored)
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0
        area = float(np.trapezoid(tpr, fpr))
        assert abs(area - mx.roc_auc(scored)) < 1e-12


# -- PR curve and average precision ---------------------------------------------------


def test_average_precision_hand_case():
    (recalls, precisions), ap = mx.pr_curve_and_auc(hand_set())
    assert ap == HAND_AP
    assert np.array_equal(recalls, [0.5, 0.5, 1.0, 1.0])
    assert np.allclose(precisions, [1.0, 0.5, 2.0 / 3.0, 0.5], rtol=0, atol=1e-15)


def test_average_precision_matches_enumeration_exactly():
    for scored in random_sets(40, max_n=50, seed=3):
        expect = enumerate_ap(scored.scores.tolist(), scored.labels.tolist())
        (_, _), ap = mx.pr_curve_and_auc(scored)
        assert ap == expect


def test_perfect_ranking_has_unit_average_precision():
    scored = ScoredSet([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    (_, _), ap = mx.pr_curve_and_auc(scored)
    assert ap == 1.0


# -- confusion at a threshold -----------------------------------------------------------


def test_confusion_counts_score_at_threshold_as_positive():
    scored = ScoredSet([0.9, 0.4, 0.6], [1, 0, 1])
    at_half = mx.confusion_at(scored, 0.5)
    assert (at_half.tp, at_half.fp, at_half.tn, at_half.fn) == (2, 0, 1, 0)
    assert at_half.precision == 1.0 and at_half.recall == 1.0 and at_half.f1 == 1.0
    at_07 = mx.confusion_at(scored, 0.7)
    assert (at_07.tp, at_07.fp, at_07.tn, at_07.fn) == (1, 0, 1, 1)
    assert at_07.precision == 1.0
    assert at_07.recall == 0.5
    assert abs(at_07.f1 - 2.0 / 3.0) < 1e-15
    boundary = mx.confusion_at(ScoredSet([0.5], [1]), 0.5)
    assert boundary.tp == 1  # score equal to the threshold predicts positive


def test_confusion_zero_denominators_default_to_zero():
    scored = ScoredSet([0.1, 0.2], [0, 1])
    nothing_predicted = mx.confusion_at(scored, 0.9)
    assert nothing_predicted.precision == 0.0
    assert nothing_predicted.recall == 0.0
    assert nothing_predicted.f1 == 0.0
    no_positives = mx.confusion_at(ScoredSet([0.9, 0.8], [0, 0]), 0.5)
    assert no_positives.recall == 0.0 and no_positives.f1 == 0.0


# -- best F1 scan -------------------------------------------------------------------------


def test_best_f1_picks_lowest_threshold_on_ties():
    # thresholds 0.3 and 0.7 both give F1 = 1 on their own half; craft a
    # set where two distinct thresholds yield the same best F1
    scored = ScoredSet([0.7, 0.3], [1, 1])
    with pytest.raises(UndefinedMetricError):
        mx.best_f1_threshold(scored)
    tied = ScoredSet([0.9, 0.7, 0.2], [1, 1, 0])
    best = mx.best_f1_threshold(tied)
    assert best.f1 == 1.0
    assert best.threshold == 0.7  # 0.9 also reaches F1=1 for its own cut? no: recall 0.5
    lower_tie = ScoredSet([0.8, 0.6, 0.4, 0.2], [1, 0, 1, 0])
    report = mx.best_f1_threshold(lower_tie)
    brute = max(
        (mx.confusion_at(lower_tie, t) for t in np.unique(lower_tie.scores)),
        key=lambda r: r.f1,
    )
    assert report.f1 == brute.f1
    candidates = [t for t in np.unique(lower_tie.scores)
                  if mx.confusion_at(lower_tie, t).f1 == report.f1]
    assert report.threshold == min(candidates)


def test_best_f1_matches_brute_force_scan():
    for scored in random_sets(30, max_n=80, seed=4):
        report = mx.best_f1_threshold(scored)
        thresholds = np.unique(scored.scores)
        best_brute = max(mx.confusion_at(scored, t).f1 for t in thresholds)
        assert report.f1 == best_brute
        achieved = mx.confusion_at(scored, report.threshold)
        assert achieved.f1 == report.f1
        assert (achieved.tp, achieved.fp, achieved.tn, achieved.fn) == (
            report.tp, report.fp, report.tn, report.fn)
        # a tie means bitwise-equal F1; lowest such threshold wins
        lowest = min(t for t in thresholds
                     if mx.confusion_at(scored, t).f1 == best_brute)
        assert report.threshold == lowest


# -- evaluation report ---------------------------------------------------------------------


def test_evaluate_scored_bundles_both_operating_points():
    report = mx.evaluate_scored(hand_set())
    assert report.roc_auc == HAND_AUC
    assert report.pr_auc == HAND_AP
    assert report.at_half.threshold == 0.5
    assert report.best.f1 >= report.at_half.f1


# -- delimited exports ------------------------------------------------------------------


def test_write_metrics_csv_format(tmp_path):
    path = tmp_path / "metrics.csv"
    mx.write_metrics_csv(path, [("MMDIN", 0.8006, 0.75, 0.7, 2.0 / 3.0, 0.5, 0.45)])
    lines = path.read_text().splitlines()
    assert lines[0] == "model,roc_auc,pr_auc,f1,precision,recall,threshold"
    assert lines[1] == "MMDIN,0.800600,0.750000,0.700000,0.666667,0.500000,0.450000"


def test_export_reports_writes_all_artifacts(tmp_path):
    scored = hand_set()
    entries = [("demo", scored, mx.evaluate_scored(scored))]
    written = mx.export_reports(tmp_path, entries, jitter_seed=3)
    names = sorted(p.name for p in written)
    assert names == ["metrics.csv", "metrics_at_0.5.csv", "pr_demo.csv",
                     "roc_demo.csv", "scatter_demo.csv"]
    roc_lines = (tmp_path / "roc_demo.csv").read_text().splitlines()
    assert roc_lines[0] == "fpr,tpr"
    assert len(roc_lines) == 6  # anchor + 4 distinct thresholds
    pr_lines = (tmp_path / "pr_demo.csv").read_text().splitlines()
    assert pr_lines[0] == "recall,precision"
    scatter_lines = (tmp_path / "scatter_demo.csv").read_text().splitlines()
    assert scatter_lines[0] == "jitter_x,score,label"
    assert len(scatter_lines) == 5
    for ln in scatter_lines[1:]:
        x, s, y = ln.split(",")
        assert 0.0 <= float(x) < 1.0
        assert y in ("0", "1")


def test_export_reports_deterministic_and_capped(tmp_path):
    rng = np.random.default_rng(5)
    scores = rng.random(500)
    labels = (rng.random(500) < 0.5).astype(np.int64)
    if labels.sum() in (0, 500):
        labels[0] = 1 - labels[0]
    scored = ScoredSet(scores, labels)
    entries = [("big", scored, mx.evaluate_scored(scored))]
    a, b = tmp_path / "a", tmp_path / "b"
    mx.export_reports(a, entries, jitter_seed=11, scatter_cap=100)
    mx.export_reports(b, entries, jitter_seed=11, scatter_cap=100)
    for name in ("metrics.csv", "scatter_big.csv", "roc_big.csv", "pr_big.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert len((a / "scatter_big.csv").read_text().splitlines()) == 101
