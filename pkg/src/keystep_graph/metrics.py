"""Top-1 accuracy and confidence-gated F1 over ego-node predictions.

F1@threshold counts a record as a positive prediction of ``predicted_label``
only when its confidence reaches the threshold; a suppressed record predicts
nothing and its true class accrues a false negative. Classes without any
ground-truth record are left out of the average. The benchmark's official
definition may differ from this one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyRecords

AVERAGES = ("macro", "micro", "weighted")


@dataclass(frozen=True)
class PredictionRecord:
    take_id: str
    segment_index: int
    true_label: int
    predicted_label: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def top1_accuracy(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise EmptyRecords("top1_accuracy needs at least one record")
    correct = sum(r.predicted_label == r.true_label for r in records)
    return 100.0 * correct / len(records)


def confusion_counts(records: Sequence[PredictionRecord], threshold: float, num_classes: int):
    """Per-class (TP, FP, FN, support) arrays under the gating rule."""
    tp = np.zeros(num_classes, dtype=np.int64)
    fp = np.zeros(num_classes, dtype=np.int64)
    fn = np.zeros(num_classes, dtype=np.int64)
    support = np.zeros(num_classes, dtype=np.int64)
    for r in records:
        support[r.true_label] += 1
        if r.confidence >= threshold:
            if r.predicted_label == r.true_label:
                tp[r.true_label] += 1
            else:
                fp[r.predicted_label] += 1
                fn[r.true_label] += 1
        else:
            fn[r.true_label] += 1
    return tp, fp, fn, support


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def f1_at_threshold(
    records: Sequence[PredictionRecord],
    threshold: float = 0.1,
    num_classes: Optional[int] = None,
    average: str = "macro",
) -> float:
    if not records:
        raise EmptyRecords("f1_at_threshold needs at least one record")
    if average not in AVERAGES:
        raise ValueError(f"average must be one of {AVERAGES}, got {average!r}")
    if num_classes is None:
        num_classes = 1 + max(max(r.true_label, r.predicted_label) for r in records)
    tp, fp, fn, support = confusion_counts(records, threshold, num_classes)
    if average == "micro":
        p = _ratio(tp.sum(), tp.sum() + fp.sum())
        r = _ratio(tp.sum(), tp.sum() + fn.sum())
        return 100.0 * float(_ratio(2 * p * r, p + r))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    present = support > 0
    if average == "weighted":
        return 100.0 * float((f1[present] * support[present]).sum() / support[present].sum())
    return 100.0 * float(f1[present].mean())


@dataclass
class FoldMetrics:
    fold: int
    acc: float
    f1: float
    n: int


@dataclass
class MetricsReport:
    variant: str
    context: str
    folds: list[FoldMetrics]
    mean_acc: float
    mean_f1: float
    weighted_mean_acc: Optional[float] = None
    weighted_mean_f1: Optional[float] = None
    threshold: float = 0.1
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant,
            "context": self.context,
            "folds": [{"fold": f.fold, "acc": f.acc, "f1_at_0.1": f.f1, "n": f.n} for f in self.folds],
            "mean_acc": self.mean_acc,
            "mean_f1": self.mean_f1,
        }
        if self.threshold != 0.1:
            d["threshold"] = self.threshold
        if self.weighted_mean_acc is not None:
            # fold sizes differ: the unweighted mean above stays canonical
            d["weighted_mean_acc"] = self.weighted_mean_acc
            d["weighted_mean_f1"] = self.weighted_mean_f1
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def table(self) -> str:
        lines = [f"variant={self.variant} context={self.context}", f"{'fold':>6} {'n':>6} {'acc':>8} {'F1@' + str(self.threshold):>8}"]
        for f in self.folds:
            lines.append(f"{f.fold:>6} {f.n:>6} {f.acc:>8.2f} {f.f1:>8.2f}")
        lines.append(f"{'mean':>6} {sum(f.n for f in self.folds):>6} {self.mean_acc:>8.2f} {self.mean_f1:>8.2f}")
        return "\n".join(lines)


def fold_metrics(fold: int, records, threshold: float = 0.1, num_classes=None, average="macro") -> FoldMetrics:
    return FoldMetrics(fold, top1_accuracy(records), f1_at_threshold(records, threshold, num_classes, average), len(records))


def aggregate_folds(folds: Sequence[FoldMetrics], variant: str = "", context: str = "", threshold: float = 0.1) -> MetricsReport:
    """Unweighted mean over folds; sample-weighted means are added when fold sizes differ."""
    folds = list(folds)
    if not folds:
        return MetricsReport(variant, context, [], 0.0, 0.0, threshold=threshold)
    mean_acc = sum(f.acc for f in folds) / len(folds)
    mean_f1 = sum(f.f1 for f in folds) / len(folds)
    w_acc = w_f1 = None
    if len({f.n for f in folds}) > 1:
        total = sum(f.n for f in folds)
        w_acc = sum(f.acc * f.n for f in folds) / total
        w_f1 = sum(f.f1 * f.n for f in folds) / total
    return MetricsReport(variant, context, folds, mean_acc, mean_f1, w_acc, w_f1, threshold)


def report_from_dict(d: dict) -> MetricsReport:
    folds = [FoldMetrics(f["fold"], f["acc"], f["f1_at_0.1"], f["n"]) for f in d["folds"]]
    return MetricsReport(
        d["variant"], d["context"], folds, d["mean_acc"], d["mean_f1"],
        d.get("weighted_mean_acc"), d.get("weighted_mean_f1"), d.get("threshold", 0.1),
    )
