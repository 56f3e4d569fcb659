"""Confusion matrices and classification quality measures.

Everything reduces to the K×K confusion matrix (rows = true class,
columns = predicted).  Per-class values use the one-vs-rest reduction;
ratios with an empty denominator are 0 by convention, and macro-F1
averages only over classes that actually occur in the true labels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError


def confusion(true_labels: Sequence[int], pred_labels: Sequence[int], k: int) -> np.ndarray:
    """K×K count matrix; counts[t][p] = samples of true class t predicted p."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise DataError(f"label arrays must be 1-D and equal length, got {t.shape} vs {p.shape}")
    if k < 1:
        raise DataError(f"need at least one class, got k={k}")
    if len(t) and (t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k):
        raise DataError(f"labels must lie in [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass(frozen=True)
class BinaryMetrics:
    """One-vs-rest counts and measures for a single class."""

    tp: int
    fp: int
    fn: int
    tn: int
    acc: float
    precision: float
    recall: float
    f1: float


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def binary_metrics(cm: np.ndarray, c: int) -> BinaryMetrics:
    """Reduce the confusion matrix to class-c-vs-rest."""
    k = cm.shape[0]
    if not 0 <= c < k:
        raise DataError(f"class index {c} out of range for {k} classes")
    tp = int(cm[c, c])
    fp = int(cm[:, c].sum() - cm[c, c])
    fn = int(cm[c, :].sum() - cm[c, c])
    total = int(cm.sum())
    tn = total - tp - fp - fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return BinaryMetrics(
        tp=tp, fp=fp, fn=fn, tn=tn,
        acc=_ratio(tp + tn, total),
        precision=precision, recall=recall, f1=f1,
    )


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    per_class: Tuple[BinaryMetrics, ...]
    macro_f1: float


def macro_metrics(cm: np.ndarray) -> MetricsReport:
    """Overall accuracy plus per-class measures; macro-F1 averages the F1 of
    classes present in the true labels (rows with any count)."""
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise DataError(f"confusion matrix must be square, got shape {cm.shape}")
    total = int(cm.sum())
    acc = _ratio(int(np.trace(cm)), total)
    per_class = tuple(binary_metrics(cm, c) for c in range(cm.shape[0]))
    present = [c for c in range(cm.shape[0]) if cm[c, :].sum() > 0]
    macro_f1 = float(np.mean([per_class[c].f1 for c in present])) if present else 0.0
    return MetricsReport(acc=acc, per_class=per_class, macro_f1=macro_f1)


def report_to_dict(report: MetricsReport, class_names: Optional[Sequence[str]] = None) -> dict:
    """JSON-ready view with fixed key names."""
    names: List[str] = (
        list(class_names) if class_names is not None
        else [str(i) for i in range(len(report.per_class))]
    )
    if len(names) != len(report.per_class):
        raise DataError(f"{len(names)} class names for {len(report.per_class)} classes")
    per_class: Dict[str, dict] = {}
    for name, b in zip(names, report.per_class):
        per_class[name] = {
            "tp": b.tp, "fp": b.fp, "fn": b.fn, "tn": b.tn,
            "acc": b.acc, "precision": b.precision, "recall": b.recall, "f1": b.f1,
        }
    return {"acc": report.acc, "per_class": per_class, "macro_f1": report.macro_f1}
