"""ROC curves and areas at object and point level."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .exceptions import DegenerateLabelsError, RegadError

__all__ = ["auroc", "o_auroc", "p_auroc", "roc_curve"]


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise RegadError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise RegadError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise RegadError("labels must be 0 or 1")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise DegenerateLabelsError("degenerate labels")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate: P(s+ > s-) + 0.5 P(s+ = s-)."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s)  # average ranks give tied pairs half credit
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def o_auroc(results) -> float:
    """AUROC over ``(object_score, object_label)`` pairs."""
    arr = list(results)
    if not arr:
        raise DegenerateLabelsError("degenerate labels")
    s, y = zip(*arr)
    return auroc(s, y)


def p_auroc(results) -> float:
    """AUROC over pooled per-point data: ``(scores, labels)`` arrays per sample."""
    arr = list(results)
    if not arr:
        raise DegenerateLabelsError("degenerate labels")
    s = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a, _ in arr])
    y = np.concatenate([np.asarray(b).reshape(-1) for _, b in arr])
    return auroc(s, y)


def roc_curve(scores, labels) -> np.ndarray:
    """(fpr, tpr) rows from (0, 0) to (1, 1), one per distinct threshold."""
    s, y = _check(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (~y).sum()]
    return np.column_stack([fpr, tpr])
