import numpy as np
import pytest

from thermobyol.data import kfold_plan, synth_thermal_dataset
from thermobyol.errors import EmptyMatrix, LabelOutOfRange, LengthMismatch
from thermobyol.metrics import (
    average_report,
    confusion_matrix,
    evaluate_predictions,
    inference_timing,
    kfold_evaluate,
    metrics_from_cm,
    roc_auc_ovr,
    roc_curve_points,
)


def _brute_force_metrics(preds, labels, k):
    """Independent recount straight from the (pred, label) pairs."""
    precision, recall, f1 = [], [], []
    correct = sum(int(p == t) for p, t in zip(preds, labels))
    for cls in range(k):
        tp = sum(1 for p, t in zip(preds, labels) if p == cls and t == cls)
        fp = sum(1 for p, t in zip(preds, labels) if p == cls and t != cls)
        fn = sum(1 for p, t in zip(preds, labels) if p != cls and t == cls)
        pr = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn) if tp + fn else 0.0
        precision.append(pr)
        recall.append(rc)
        f1.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
    return correct / len(preds), precision, recall, f1


def _brute_force_auc(scores, positives):
    """All-pairs ordering count; ties worth one half."""
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(pos) * len(neg))


def test_cm_perfect_predictions_diagonal():
    cm = confusion_matrix([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert np.array_equal(cm.counts, np.diag([1, 2, 1]))


def test_cm_hand_count():
    cm = confusion_matrix([1, 1], [0, 1], 2)
    assert np.array_equal(cm.counts, [[0, 1], [0, 1]])


def test_cm_empty_input():
    cm = confusion_matrix([], [], 3)
    assert cm.counts.sum() == 0


def test_cm_errors():
    with pytest.raises(LengthMismatch):
        confusion_matrix([0], [0, 1], 2)
    with pytest.raises(LabelOutOfRange):
        confusion_matrix([0, 2], [0, 1], 2)


def test_metrics_perfect_classifier():
    report = metrics_from_cm(confusion_matrix([0, 1, 2], [0, 1, 2], 3))
    assert report.accuracy == 1.0
    assert report.macro_precision == report.macro_recall == report.macro_f1 == 1.0


def test_metrics_hand_case():
    cm = confusion_matrix([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert np.array_equal(cm.counts, [[1, 1], [0, 2]])
    r = metrics_from_cm(cm)
    assert r.accuracy == pytest.approx(0.75)
    assert r.per_class_precision[0] == pytest.approx(1.0)
    assert r.per_class_recall[0] == pytest.approx(0.5)
    assert r.per_class_f1[0] == pytest.approx(2 / 3)
    assert r.per_class_precision[1] == pytest.approx(2 / 3)
    assert r.per_class_recall[1] == pytest.approx(1.0)
    assert r.per_class_f1[1] == pytest.approx(0.8)
    assert r.macro_f1 == pytest.approx((2 / 3 + 0.8) / 2, abs=1e-9)


def test_metrics_empty_matrix():
    with pytest.raises(EmptyMatrix):
        metrics_from_cm(confusion_matrix([], [], 2))


def test_metrics_match_brute_force_recount():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 50))
        k = int(rng.integers(2, 11))
        preds = rng.integers(0, k, size=n)
        labels = rng.integers(0, k, size=n)
        r = metrics_from_cm(confusion_matrix(preds, labels, k))
        acc, pr, rc, f1 = _brute_force_metrics(preds, labels, k)
        assert r.accuracy == pytest.approx(acc, abs=1e-12)
        np.testing.assert_allclose(r.per_class_precision, pr, atol=1e-12)
        np.testing.assert_allclose(r.per_class_recall, rc, atol=1e-12)
        np.testing.assert_allclose(r.per_class_f1, f1, atol=1e-12)
        assert r.macro_f1 <= max(r.per_class_f1) + 1e-12


def test_auc_perfect_and_tied():
    labels = np.array([0, 0, 1, 1])
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8]])
    per_class, macro, skipped = roc_auc_ovr(scores, labels)
    assert per_class == [1.0, 1.0] and macro == 1.0 and skipped == []

    flat = np.full((6, 2), 0.5)
    per_class, macro, _ = roc_auc_ovr(flat, np.array([0, 0, 0, 1, 1, 1]))
    assert per_class == [0.5, 0.5]


def test_auc_degenerate_class_skipped():
    scores = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]])
    per_class, macro, skipped = roc_auc_ovr(scores, np.array([0, 1]))
    assert skipped == [2]
    assert np.isnan(per_class[2])
    assert macro == pytest.approx(1.0)


def test_auc_matches_all_pairs_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(4, 50))
        k = int(rng.integers(2, 4))
        labels = rng.integers(0, k, size=n)
        scores = rng.uniform(size=(n, k))
        scores[rng.random(size=(n, k)) < 0.3] = 0.5  # force ties
        per_class, _, skipped = roc_auc_ovr(scores, labels)
        for cls in range(k):
            if cls in skipped:
                continue
            assert per_class[cls] == pytest.approx(
                _brute_force_auc(scores[:, cls], labels == cls), abs=1e-12
            )


def test_roc_curve_endpoints():
    points = roc_curve_points(np.array([0.9, 0.8, 0.3, 0.1]), np.array([True, True, False, False]))
    assert points[0] == (0.0, 0.0)
    assert points[-1] == (1.0, 1.0)
    # monotone non-decreasing in both coordinates
    assert all(a <= c and b <= d for (a, b), (c, d) in zip(points, points[1:]))


def test_inference_timing_contract():
    rng = np.random.default_rng(2)
    pixels = rng.uniform(size=(10, 4)).astype(np.float32)
    calls = []

    def forward(batch):
        calls.append(batch.shape[0])
        return batch

    report = inference_timing(forward, pixels, batch_size=4, warmup=2, min_batches=30)
    assert len(calls) == 32  # warmup excluded from stats but still executed
    assert report.p50 <= report.p95
    assert report.mean_ms_per_image > 0
    assert report.batch_size == 4


def test_average_report_is_column_mean():
    rng = np.random.default_rng(3)
    reports = []
    for _ in range(5):
        preds = rng.integers(0, 3, size=30)
        labels = rng.integers(0, 3, size=30)
        probs = rng.uniform(size=(30, 3))
        probs /= probs.sum(axis=1, keepdims=True)
        reports.append(evaluate_predictions(probs, labels, 3))
    avg = average_report(reports)
    assert avg.accuracy == pytest.approx(np.mean([r.accuracy for r in reports]), abs=1e-9)
    assert avg.auc_macro_ovr == pytest.approx(np.mean([r.auc_macro_ovr for r in reports]), abs=1e-9)
    # permutation invariance in fold order
    avg2 = average_report(list(reversed(reports)))
    assert avg.macro_f1 == pytest.approx(avg2.macro_f1, abs=1e-12)


def test_kfold_evaluate_coverage_and_averages():
    ds = synth_thermal_dataset(num_classes=3, per_class=10, size=(16, 16), seed=4)
    plan = kfold_plan(len(ds), k=5, seed=5)
    evaluated = []

    def recipe(train_samples, fold_rng):
        train_ids = {s.source_id for s in train_samples}

        def predict_fn(pixels):
            evaluated.append(len(pixels))
            assert len(train_ids) == len(ds) - len(pixels)
            # nearest-centroid probabilities; enough to exercise the driver
            labels = np.array([s.label for s in train_samples])
            X = np.stack([s.pixels.ravel() for s in train_samples])
            centroids = np.stack([X[labels == c].mean(axis=0) for c in range(3)])
            d = ((pixels.reshape(len(pixels), -1)[:, None] - centroids[None]) ** 2).sum(axis=2)
            logits = -d
            e = np.exp(logits - logits.max(axis=1, keepdims=True))
            return e / e.sum(axis=1, keepdims=True)

        return predict_fn

    reports, avg = kfold_evaluate(ds, plan, recipe, np.random.default_rng(6))
    assert len(reports) == 5
    assert sum(evaluated) == len(ds)  # every sample scored exactly once
    assert avg.accuracy == pytest.approx(np.mean([r.accuracy for r in reports]), abs=1e-9)
