"""Confusion-matrix metrics: accuracy, Cohen's kappa and mean IoU.

Kappa and mIoU are ratios of integer counts, so they are evaluated in exact
rational arithmetic and rounded once at the end. Worked examples such as an
mIoU of 7/12 then come out as the nearest double, not one ulp away.
"""
from fractions import Fraction

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has a zero denominator for this confusion matrix."""


class ConfusionMatrix:
    """Integer counts, rows = true class, columns = predicted class."""

    __slots__ = ("counts",)

    def __init__(self, counts):
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        self.counts = counts.astype(np.int64)

    @property
    def n(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def confusion(true_labels, predicted_labels, n, ignore=-1):
    """Count (true, predicted) pairs; entries whose true label is ``ignore`` are skipped."""
    t = np.asarray(true_labels).reshape(-1)
    p = np.asarray(predicted_labels).reshape(-1)
    if t.shape != p.shape:
        raise ValueError(f"label arrays differ in length: {t.size} vs {p.size}")
    keep = t != ignore
    t, p = t[keep].astype(np.int64), p[keep].astype(np.int64)
    for name, arr in (("true", t), ("predicted", p)):
        bad = (arr < 0) | (arr >= n)
        if np.any(bad):
            raise ValueError(f"{name} label {int(arr[bad][0])} out of range [0, {n})")
    counts = np.bincount(t * n + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(counts)


def accuracy(cm):
    total = cm.total
    if total == 0:
        raise UndefinedMetricError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / total)


def cohen_kappa(cm):
    """``(p_o - p_e) / (1 - p_e)`` with chance agreement from the marginals."""
    total = cm.total
    if total == 0:
        raise UndefinedMetricError("kappa of an empty confusion matrix")
    c = cm.counts.tolist()
    agree = sum(c[i][i] for i in range(cm.n))
    rows = [sum(r) for r in c]
    cols = [sum(r[j] for r in c) for j in range(cm.n)]
    chance = sum(r * k for r, k in zip(rows, cols))
    # (p_o - p_e) / (1 - p_e) with both probabilities scaled by total**2
    if chance == total * total:
        raise UndefinedMetricError("kappa undefined: expected agreement is 1 (single class)")
    return float(Fraction(agree * total - chance, total * total - chance))


def iou_per_class(cm):
    """IoU per class; ``nan`` where the class is absent from truth and prediction."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    denom = c.sum(axis=0) + c.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / np.where(denom > 0, denom, 1), np.nan)


def mean_iou(cm, ignore=()):
    """Mean IoU over non-ignored classes that appear in truth or prediction."""
    if cm.total == 0:
        raise UndefinedMetricError("mIoU of an empty confusion matrix")
    c = cm.counts
    tp = np.diag(c)
    denom = c.sum(axis=0) + c.sum(axis=1) - tp
    ignore = set(ignore)
    keep = [k for k in range(cm.n) if k not in ignore and denom[k] > 0]
    if not keep:
        raise UndefinedMetricError("mIoU undefined: every class is ignored or absent")
    return float(sum(Fraction(int(tp[k]), int(denom[k])) for k in keep) / len(keep))
