"""Multi-class classification metrics derived from a confusion matrix.

Seven scalars are reported: test error, accuracy, recall, precision,
specificity, MCC, and F1. Precision/recall/specificity are one-vs-rest and
macro-averaged by default (micro is available); F1 is the harmonic mean of
the averaged precision and recall; MCC is the multi-class R_K correlation,
which reduces to the classical binary formula at C = 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

REPORT_KEYS = ("test_error", "accuracy", "recall", "precision",
               "specificity", "mcc", "f1")


class ConfusionMatrix:
    """C x C counts; rows are true classes, columns are predicted classes."""

    def __init__(self, num_classes: int, class_names: list[str] | None = None):
        if num_classes < 2:
            raise ValueError(f"ConfusionMatrix: need >= 2 classes, got {num_classes}")
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.class_names = class_names or [str(i) for i in range(num_classes)]
        if len(self.class_names) != num_classes:
            raise ValueError("ConfusionMatrix: class_names length mismatch")

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, true_label: int, predicted_label: int) -> None:
        c = self.num_classes
        if not (0 <= true_label < c and 0 <= predicted_label < c):
            raise ValueError(
                f"accumulate: labels ({true_label}, {predicted_label}) outside [0, {c})")
        self.counts[true_label, predicted_label] += 1

    def accumulate_batch(self, true_labels, predicted_labels) -> None:
        for t, p in zip(np.asarray(true_labels), np.asarray(predicted_labels)):
            self.accumulate(int(t), int(p))

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Elementwise-add another shard's counts (parallel evaluation)."""
        if other.num_classes != self.num_classes:
            raise ValueError("merge: class count mismatch")
        self.counts += other.counts
        return self

    @classmethod
    def from_counts(cls, counts, class_names=None) -> "ConfusionMatrix":
        arr = np.asarray(counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"from_counts: expected a square grid, got {arr.shape}")
        if (arr < 0).any():
            raise ValueError("from_counts: negative counts")
        cm = cls(arr.shape[0], class_names)
        cm.counts = arr.copy()
        return cm


@dataclass
class MetricsReport:
    test_error: float
    accuracy: float
    recall: float
    precision: float
    specificity: float
    mcc: float
    f1: float
    degenerate_ratios: int = field(default=0, compare=False)

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in REPORT_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())

    def to_csv(self) -> str:
        header = ",".join(REPORT_KEYS)
        row = ",".join(repr(getattr(self, k)) for k in REPORT_KEYS)
        return f"{header}\n{row}\n"


def _safe_ratio(num: float, den: float, flags: list) -> float:
    if den == 0:
        flags.append(1)
        return 0.0
    return num / den


def compute_report(cm: ConfusionMatrix, average: str = "macro") -> MetricsReport:
    """All seven metrics from one confusion matrix."""
    m = cm.counts.astype(np.float64)
    total = m.sum()
    if total <= 0:
        raise ValueError("compute_report: empty confusion matrix")
    c = cm.num_classes
    flags: list = []

    tp = np.diag(m)
    row = m.sum(axis=1)   # true-class totals
    col = m.sum(axis=0)   # predicted-class totals
    fn = row - tp
    fp = col - tp
    tn = total - tp - fn - fp

    accuracy = float(tp.sum() / total)

    if average == "macro":
        precision = float(np.mean([_safe_ratio(tp[i], tp[i] + fp[i], flags)
                                   for i in range(c)]))
        recall = float(np.mean([_safe_ratio(tp[i], tp[i] + fn[i], flags)
                                for i in range(c)]))
        specificity = float(np.mean([_safe_ratio(tn[i], tn[i] + fp[i], flags)
                                     for i in range(c)]))
    elif average == "micro":
        precision = _safe_ratio(tp.sum(), (tp + fp).sum(), flags)
        recall = _safe_ratio(tp.sum(), (tp + fn).sum(), flags)
        specificity = _safe_ratio(tn.sum(), (tn + fp).sum(), flags)
    else:
        raise ValueError(f"compute_report: unknown average {average!r}")

    f1 = _safe_ratio(2 * precision * recall, precision + recall, flags)
    mcc = _rk_statistic(m, flags)

    return MetricsReport(
        test_error=1.0 - accuracy,
        accuracy=accuracy,
        recall=recall,
        precision=precision,
        specificity=specificity,
        mcc=mcc,
        f1=f1,
        degenerate_ratios=len(flags),
    )


def _rk_statistic(m: np.ndarray, flags: list) -> float:
    """Multi-class correlation between true and predicted labels.

    (s*trace - p.t) / sqrt((s^2 - p.p)(s^2 - t.t)) with p = predicted totals,
    t = true totals, s = grand total.
    """
    s = m.sum()
    t = m.sum(axis=1)
    p = m.sum(axis=0)
    num = s * np.trace(m) - p @ t
    den = np.sqrt(s * s - p @ p) * np.sqrt(s * s - t @ t)
    if den == 0:
        flags.append(1)
        return 0.0
    return float(num / den)


def relative_change(baseline: float, improved: float) -> float:
    """Percent change of ``improved`` relative to a positive baseline."""
    if baseline <= 0:
        raise ValueError(f"relative_change: baseline must be > 0, got {baseline}")
    return 100.0 * (improved - baseline) / baseline
