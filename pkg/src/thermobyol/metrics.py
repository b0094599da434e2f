"""Classification metrics, one-vs-rest ROC/AUC, inference timing, and the
k-fold evaluation driver.

Precision/recall/F1 use macro averaging with the zero-division-gives-zero
convention; AUC uses the rank-statistic (Mann-Whitney) formulation with
midrank tie handling.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import KFoldPlan
from .errors import (
    EmptyDataset,
    EmptyMatrix,
    LabelOutOfRange,
    LengthMismatch,
)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [K,K], rows = true class, cols = predicted

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def num_classes(self):
        return self.counts.shape[0]


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_precision: list
    per_class_recall: list
    per_class_f1: list
    auc_macro_ovr: float = float("nan")
    per_class_auc: list = field(default_factory=list)

    def to_dict(self, fold=None):
        out = {}
        if fold is not None:
            out["fold"] = fold
        out.update(
            accuracy=self.accuracy,
            precision_macro=self.macro_precision,
            recall_macro=self.macro_recall,
            f1_macro=self.macro_f1,
            auc_macro=self.auc_macro_ovr,
            per_class=[
                {
                    "precision": self.per_class_precision[k],
                    "recall": self.per_class_recall[k],
                    "f1": self.per_class_f1[k],
                    "auc": self.per_class_auc[k] if self.per_class_auc else None,
                }
                for k in range(len(self.per_class_precision))
            ],
        )
        return out


@dataclass
class TimingReport:
    mean_ms_per_image: float
    p50: float
    p95: float
    batch_size: int
    warmup_batches: int


def confusion_matrix(preds, labels, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise LengthMismatch(f"{preds.shape} predictions vs {labels.shape} labels")
    if preds.size and (
        preds.min() < 0 or preds.max() >= num_classes
        or labels.min() < 0 or labels.max() >= num_classes
    ):
        raise LabelOutOfRange(f"entries must lie in [0,{num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def metrics_from_cm(cm: ConfusionMatrix) -> MetricsReport:
    c = cm.counts
    if cm.total < 1:
        raise EmptyMatrix("confusion matrix holds no samples")
    tp = np.diag(c).astype(float)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return MetricsReport(
        accuracy=float(tp.sum() / cm.total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class_precision=precision.tolist(),
        per_class_recall=recall.tolist(),
        per_class_f1=f1.tolist(),
    )


def _binary_auc(scores, positives):
    """Mann-Whitney AUC with midranks; ties count one half."""
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    ranks = rankdata(scores)  # midranks
    rank_sum = ranks[positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auc_ovr(scores, labels):
    """Per-class one-vs-rest AUC plus the macro mean over computable classes.

    Classes lacking a positive or a negative sample get AUC nan and a place
    in `skipped`. Returns (per_class_auc, macro_auc, skipped).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = scores.shape
    if labels.shape != (n,):
        raise LengthMismatch(f"{labels.shape} labels vs {n} score rows")
    per_class = []
    skipped = []
    for cls in range(k):
        pos = labels == cls
        if pos.all() or not pos.any():
            per_class.append(float("nan"))
            skipped.append(cls)
            continue
        per_class.append(_binary_auc(scores[:, cls], pos))
    computable = [a for a in per_class if not np.isnan(a)]
    macro = float(np.mean(computable)) if computable else float("nan")
    return per_class, macro, skipped


def roc_curve_points(scores, positives):
    """(FPR, TPR) pairs over descending score thresholds for one binary task."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    sorted_pos = positives[order]
    n_pos = max(int(positives.sum()), 1)
    n_neg = max(int((~positives).sum()), 1)
    tps = np.cumsum(sorted_pos)
    fps = np.cumsum(~sorted_pos)
    # keep one point per distinct threshold
    distinct = np.flatnonzero(np.diff(scores[order], append=-np.inf))
    points = [(0.0, 0.0)]
    points += [(float(fps[i]) / n_neg, float(tps[i]) / n_pos) for i in distinct]
    return points


def evaluate_predictions(probs, labels, num_classes) -> MetricsReport:
    """Full report (confusion metrics + OvR AUC) from probabilities."""
    preds = np.asarray(probs).argmax(axis=1)
    report = metrics_from_cm(confusion_matrix(preds, labels, num_classes))
    per_class, macro, _ = roc_auc_ovr(probs, labels)
    report.per_class_auc = per_class
    report.auc_macro_ovr = macro
    return report


def inference_timing(forward_fn, pixels, batch_size=64, warmup=2, min_batches=30) -> TimingReport:
    """Time `forward_fn` on batches drawn cyclically from `pixels`."""
    n = len(pixels)
    if n == 0:
        raise EmptyDataset("timing needs a non-empty dataset")

    def batch(i):
        idx = np.arange(i * batch_size, (i + 1) * batch_size) % n
        return pixels[idx]

    for i in range(warmup):
        forward_fn(batch(i))
    times = []
    for i in range(min_batches):
        start = time.perf_counter()
        forward_fn(batch(i))
        times.append((time.perf_counter() - start) * 1000.0 / batch_size)
    times = np.array(times)
    return TimingReport(
        mean_ms_per_image=float(times.mean()),
        p50=float(np.percentile(times, 50)),
        p95=float(np.percentile(times, 95)),
        batch_size=batch_size,
        warmup_batches=warmup,
    )


def average_report(reports) -> MetricsReport:
    """Unweighted mean row over fold reports (mirrors the Average table row)."""
    def mean(attr):
        return float(np.mean([getattr(r, attr) for r in reports]))

    k = len(reports[0].per_class_precision)

    def mean_list(attr):
        stacked = np.array([getattr(r, attr) for r in reports], dtype=float)
        return np.nanmean(stacked, axis=0).tolist() if stacked.size else [float("nan")] * k

    return MetricsReport(
        accuracy=mean("accuracy"),
        macro_precision=mean("macro_precision"),
        macro_recall=mean("macro_recall"),
        macro_f1=mean("macro_f1"),
        per_class_precision=mean_list("per_class_precision"),
        per_class_recall=mean_list("per_class_recall"),
        per_class_f1=mean_list("per_class_f1"),
        auc_macro_ovr=mean("auc_macro_ovr"),
        per_class_auc=mean_list("per_class_auc"),
    )


def kfold_evaluate(dataset, plan: KFoldPlan, train_recipe, rng):
    """Train with `train_recipe` on k-1 folds and score the held-out fold,
    for every fold. Returns (per-fold reports, average report).

    `train_recipe(train_samples, fold_rng) -> predict_fn`, where
    `predict_fn(pixels) -> probabilities`.
    """
    reports = []
    child_seeds = rng.integers(0, 2**63 - 1, size=plan.k)
    for fi, fold in enumerate(plan.folds):
        held = set(fold)
        train_samples = [dataset.images[i] for i in range(len(dataset)) if i not in held]
        predict_fn = train_recipe(train_samples, np.random.default_rng(child_seeds[fi]))
        eval_samples = [dataset.images[i] for i in fold]
        pixels = np.stack([s.pixels for s in eval_samples])
        labels = np.array([s.label for s in eval_samples])
        probs = predict_fn(pixels)
        reports.append(evaluate_predictions(probs, labels, dataset.num_classes))
    return reports, average_report(reports)
