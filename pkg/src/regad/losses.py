"""Forward evaluation of the training objective (no gradients).

The three terms are a negative log-likelihood over Sinkhorn assignments for
local features (``L_f``) and point features (``L_p``), and an overlap-aware
circle loss over patch features (``L_oc``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import RegadError
from .matching import augment_dustbin, cost_matrix, sinkhorn

__all__ = [
    "CircleLossConfig",
    "LossPair",
    "nll_loss",
    "feature_align_loss",
    "point_match_loss",
    "circle_loss_side",
    "overlap_circle_loss",
    "total_loss",
]

_CLAMP = 1e-12


@dataclass
class CircleLossConfig:
    delta_p: float = 0.1
    delta_n: float = 1.4
    gamma: float = 10.0
    positive_overlap: float = 0.1

    def __post_init__(self):
        if not (self.delta_n > self.delta_p > 0):
            raise RegadError("need delta_n > delta_p > 0")
        if not self.gamma > 0:
            raise RegadError("gamma must be positive")


@dataclass(eq=False)
class LossPair:
    """Features of one ground-truth patch pair and its matched local indices."""

    features_p: np.ndarray
    features_q: np.ndarray
    matches: np.ndarray

    def __post_init__(self):
        self.features_p = np.asarray(self.features_p, dtype=np.float64)
        self.features_q = np.asarray(self.features_q, dtype=np.float64)
        self.matches = np.asarray(self.matches, dtype=np.int64).reshape(-1, 2)


def nll_loss(z_star, matched, unmatched_rows, unmatched_cols) -> float:
    """-sum log z over matched pairs and dustbin slots of unmatched rows / columns."""
    z = np.asarray(z_star, dtype=np.float64)
    n, m = z.shape[0] - 1, z.shape[1] - 1
    matched = np.asarray(matched, dtype=np.int64).reshape(-1, 2)
    rows = np.asarray(sorted(unmatched_rows), dtype=np.int64)
    cols = np.asarray(sorted(unmatched_cols), dtype=np.int64)
    if len(matched) and (matched.min() < 0 or matched[:, 0].max() >= n or matched[:, 1].max() >= m):
        raise RegadError("matched index out of range")
    if len(rows) and (rows.min() < 0 or rows.max() >= n):
        raise RegadError("unmatched row index out of range")
    if len(cols) and (cols.min() < 0 or cols.max() >= m):
        raise RegadError("unmatched column index out of range")
    logz = np.log(np.clip(z, _CLAMP, None))
    total = -logz[matched[:, 0], matched[:, 1]].sum()
    total -= logz[rows, m].sum()
    total -= logz[n, cols].sum()
    return float(total)


def _pair_nll(fp, fq, matches, alpha, iters):
    z = sinkhorn(augment_dustbin(cost_matrix(fp, fq), alpha), iters)
    rows = set(range(fp.shape[0])) - set(matches[:, 0].tolist())
    cols = set(range(fq.shape[0])) - set(matches[:, 1].tolist())
    return nll_loss(z, matches, rows, cols)


def _as_pair(item):
    if isinstance(item, LossPair):
        return item
    fp, fq, m = item
    return LossPair(fp, fq, getattr(m, "pairs", m))


def feature_align_loss(pairs, alpha: float = 1.0, sinkhorn_iters: int = 100) -> float:
    """Mean NLL over patch pairs given as ``LossPair`` or ``(F_p, F_q, matches)``."""
    pairs = [_as_pair(p) for p in pairs]
    if not pairs:
        raise RegadError("need at least one patch pair")
    return float(np.mean([_pair_nll(p.features_p, p.features_q, p.matches, alpha, sinkhorn_iters) for p in pairs]))


def point_match_loss(pairs, alpha: float = 1.0, sinkhorn_iters: int = 100) -> float:
    """Same construction as :func:`feature_align_loss`, fed with point-level features."""
    return feature_align_loss(pairs, alpha, sinkhorn_iters)


def circle_loss_side(dist, overlap, cfg: CircleLossConfig | None = None) -> float:
    """One-directional loss: anchors are rows of ``overlap`` holding a positive.

    Per anchor ``i``::

        log(1 + sum_pos exp(l * b_p * (d - dp)) * sum_neg exp(b_n * (dn - d)))

    with ``l = sqrt(o)``, ``b_p = max(0, g (d - dp))`` and
    ``b_n = max(0, g (dn - d))``.  Anchors without negatives contribute
    ``log 1 = 0``.  Returns the mean over anchors.
    """
    cfg = cfg or CircleLossConfig()
    d = np.asarray(dist, dtype=np.float64)
    o = np.asarray(overlap, dtype=np.float64)
    if d.shape != o.shape:
        raise RegadError("distance and overlap shapes differ")
    if o.size and (o.min() < 0 or o.max() > 1):
        raise RegadError("overlap entries must lie in [0, 1]")
    pos = o > cfg.positive_overlap
    neg = o == 0
    anchors = np.flatnonzero(pos.any(axis=1))
    if len(anchors) == 0:
        raise RegadError("no positive patches")
    beta_p = np.maximum(0.0, cfg.gamma * (d - cfg.delta_p))
    beta_n = np.maximum(0.0, cfg.gamma * (cfg.delta_n - d))
    lp = np.where(pos, np.sqrt(o) * beta_p * (d - cfg.delta_p), -np.inf)[anchors]
    ln = np.where(neg, beta_n * (cfg.delta_n - d), -np.inf)[anchors]
    # log(sum exp) per side, guarded for rows without negatives
    sp = np.logaddexp.reduce(lp, axis=1)
    sn = np.logaddexp.reduce(ln, axis=1)
    return float(np.mean(np.logaddexp(0.0, sp + sn)))


def overlap_circle_loss(fp, fq, overlap, cfg: CircleLossConfig | None = None, overlap_qp=None) -> float:
    """Symmetric loss: mean of the P-anchored and Q-anchored sides.

    ``overlap[i, j]`` is the overlap ratio of P patch ``i`` against Q patch
    ``j``.  The Q side uses ``overlap_qp`` when supplied (overlap is
    directional), else ``overlap.T``.
    """
    fp = np.asarray(fp, dtype=np.float64)
    fq = np.asarray(fq, dtype=np.float64)
    if fp.shape[1] != fq.shape[1]:
        raise RegadError("feature dimension mismatch")
    d = np.sqrt(np.maximum(((fp[:, None, :] - fq[None, :, :]) ** 2).sum(axis=-1), 0.0))
    o = np.asarray(overlap, dtype=np.float64)
    o_qp = o.T if overlap_qp is None else np.asarray(overlap_qp, dtype=np.float64)
    return 0.5 * (circle_loss_side(d, o, cfg) + circle_loss_side(d.T, o_qp, cfg))


def total_loss(l_f: float, l_p: float, l_oc: float) -> float:
    return float(l_f + l_p + l_oc)
