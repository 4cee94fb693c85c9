"""Rigid registration: Kabsch fitting, RANSAC and the coarse-to-fine matching pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .descriptor import CloudFeatures
from .exceptions import RegadError, RegistrationError
from .geometry import RigidTransform
from .matching import (
    cost_matrix,
    dual_normalize,
    gaussian_correlation,
    mutual_topk_point_matches,
    sinkhorn_batch,
    topk_patch_matches,
)

__all__ = [
    "CorrespondenceSet",
    "RegistrationReport",
    "MatchingConfig",
    "RansacConfig",
    "kabsch",
    "ransac_transform",
    "collect_correspondences",
    "register",
    "registration_error",
]


@dataclass(eq=False)
class CorrespondenceSet:
    src: np.ndarray
    dst: np.ndarray
    weight: Optional[np.ndarray] = None

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.float64).reshape(-1, 3)
        self.dst = np.asarray(self.dst, dtype=np.float64).reshape(-1, 3)
        if self.src.shape != self.dst.shape:
            raise RegadError("src and dst must have equal length")
        if not (np.all(np.isfinite(self.src)) and np.all(np.isfinite(self.dst))):
            raise RegadError("correspondences must be finite")
        if self.weight is not None:
            self.weight = np.asarray(self.weight, dtype=np.float64).reshape(-1)

    def __len__(self):
        return self.src.shape[0]


@dataclass(eq=False)
class RegistrationReport:
    transform: RigidTransform
    inliers: int
    inlier_ratio: float
    rre_deg: Optional[float] = None
    rte: Optional[float] = None
    n_correspondences: int = 0
    iterations: int = 0

    def to_dict(self):
        return {
            "rre_deg": self.rre_deg,
            "rte": self.rte,
            "inliers": int(self.inliers),
            "inlier_ratio": float(self.inlier_ratio),
            "n_correspondences": int(self.n_correspondences),
            "iterations": int(self.iterations),
            "transform": self.transform.matrix().tolist(),
        }


@dataclass
class MatchingConfig:
    n_c: int = 256
    k: int = 3
    sinkhorn_iters: int = 100
    alpha: float = 1.0


@dataclass
class RansacConfig:
    iters: int = 50000
    inlier_thresh: Optional[float] = None  # None: fine voxel size
    confidence: float = 0.999
    seed: int = 0


# ---------------------------------------------------------------- rigid fits

def _kabsch_batch(src, dst):
    """Least-squares rotations/translations for batched (B, n, 3) sets.

    Returns ``(R, t, sv)`` where ``sv`` are the singular values of the
    cross-covariance, used for degeneracy checks.
    """
    cs = src.mean(axis=-2, keepdims=True)
    cd = dst.mean(axis=-2, keepdims=True)
    h = np.swapaxes(src - cs, -1, -2) @ (dst - cd)
    u, s, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, -1, -2)
    ut = np.swapaxes(u, -1, -2)
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    v = v.copy()
    v[..., :, 2] *= d[..., None]
    r = v @ ut
    t = cd[..., 0, :] - np.einsum("...ij,...j->...i", r, cs[..., 0, :])
    return r, t, s


def _degenerate(s):
    return s[..., 1] <= 1e-12 * np.maximum(s[..., 0], 1.0)


def kabsch(corr: CorrespondenceSet) -> RigidTransform:
    """Rigid transform minimising sum ||R src + t - dst||^2."""
    if len(corr) < 3:
        raise RegadError("kabsch needs at least 3 correspondences")
    r, t, s = _kabsch_batch(corr.src[None], corr.dst[None])
    if _degenerate(s)[0]:
        raise RegadError("degenerate correspondence configuration")
    return RigidTransform(r[0], t[0])


def _sample_triplets(rng, n, count):
    i = rng.integers(0, n, size=count)
    j = rng.integers(0, n - 1, size=count)
    k = rng.integers(0, n - 2, size=count)
    j = j + (j >= i)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    k = k + (k >= lo)
    k = k + (k >= hi)
    return np.stack([i, j, k], axis=1)


def _score_hypotheses(r, t, src, dst, thresh):
    """(inlier counts, truncated squared residual sums) per hypothesis."""
    pred = np.einsum("bij,nj->bni", r, src) + t[:, None, :]
    res = ((pred - dst[None]) ** 2).sum(axis=-1)
    t2 = thresh * thresh
    return (res < t2).sum(axis=1), np.minimum(res, t2).sum(axis=1)


def _refine(src, dst, r, t, thresh, max_rounds=20):
    """Refit on the inlier set until it stops changing, then repeat at half the threshold."""
    for th in (thresh, 0.5 * thresh):
        prev = None
        for _ in range(max_rounds):
            mask = ((src @ r.T + t - dst) ** 2).sum(axis=1) < th * th
            if mask.sum() < 3 or (prev is not None and np.array_equal(mask, prev)):
                break
            r2, t2, s2 = _kabsch_batch(src[mask][None], dst[mask][None])
            if _degenerate(s2)[0]:
                break
            r, t, prev = r2[0], t2[0], mask
    return r, t


def _truncated_cost(r, t, src, dst, thresh):
    res = ((src @ r.T + t - dst) ** 2).sum(axis=1)
    return float(np.minimum(res, thresh * thresh).sum())


def ransac_transform(corr: CorrespondenceSet, iters: int = 50000, inlier_thresh: float = 0.05,
                     seed: int = 0, confidence: float = 0.999, n_refine: int = 16) -> RegistrationReport:
    """RANSAC over minimal 3-point Kabsch fits, refined on the inlier sets.

    Hypotheses are ranked by truncated squared residual (capped at
    ``inlier_thresh``), which breaks count ties in favour of tighter fits.
    A sampled triplet whose pairwise edge lengths differ between source and
    target by ``2 * inlier_thresh`` or more cannot consist of inliers of any
    rigid motion, so it is discarded before fitting; ``iters`` counts sampled
    triplets including discarded ones.  Sampling stops early once
    ``confidence`` is reached for the current best inlier ratio
    (``confidence >= 1`` always draws ``iters`` triplets).

    The ``n_refine`` best hypotheses are each refitted on their inlier sets
    (at ``inlier_thresh`` and then at half of it) and the refit with the
    smallest truncated residual at the half threshold is returned.
    """
    n = len(corr)
    if n < 3:
        raise RegistrationError("registration failed", {"n_correspondences": n, "reason": "fewer than 3 correspondences"})
    if not inlier_thresh > 0:
        raise RegadError("inlier_thresh must be positive")
    src, dst = corr.src, corr.dst
    rng = np.random.default_rng(seed)
    eval_batch = int(max(16, min(1024, 4_000_000 // max(n, 1))))
    n_refine = max(1, int(n_refine))
    pool_cost = np.zeros(0)
    pool_count = np.zeros(0, dtype=np.int64)
    pool_r = np.zeros((0, 3, 3))
    pool_t = np.zeros((0, 3))
    done = 0
    while done < iters:
        b = min(16384, iters - done)
        tri = _sample_triplets(rng, n, b)
        ps, qs = src[tri], dst[tri]
        le_p = np.linalg.norm(ps - np.roll(ps, 1, axis=1), axis=2)
        le_q = np.linalg.norm(qs - np.roll(qs, 1, axis=1), axis=2)
        ok = np.flatnonzero((np.abs(le_p - le_q) < 2.0 * inlier_thresh).all(axis=1))
        for start in range(0, len(ok), eval_batch):
            sel = ok[start:start + eval_batch]
            r, t, s = _kabsch_batch(ps[sel], qs[sel])
            counts, cost = _score_hypotheses(r, t, src, dst, inlier_thresh)
            good = ~_degenerate(s) & (counts >= 3)
            pool_cost = np.concatenate([pool_cost, cost[good]])
            pool_count = np.concatenate([pool_count, counts[good]])
            pool_r = np.concatenate([pool_r, r[good]])
            pool_t = np.concatenate([pool_t, t[good]])
            keep = np.argsort(pool_cost, kind="stable")[:n_refine]
            pool_cost, pool_count, pool_r, pool_t = pool_cost[keep], pool_count[keep], pool_r[keep], pool_t[keep]
        done += b
        if confidence < 1.0 and len(pool_count):
            p_good = (pool_count.max() / n) ** 3
            if p_good >= 1.0:
                break
            needed = math.log(1.0 - confidence) / math.log1p(-p_good)
            if done >= needed:
                break
    if len(pool_cost) == 0:
        raise RegistrationError("registration failed", {"n_correspondences": n, "best_inliers": 0})

    best = None
    for r0, t0 in zip(pool_r, pool_t):
        r, t = _refine(src, dst, r0, t0, inlier_thresh)
        c = _truncated_cost(r, t, src, dst, 0.5 * inlier_thresh)
        if best is None or c < best[0]:
            best = (c, r, t)
    _, r, t = best
    count = int((((src @ r.T + t - dst) ** 2).sum(axis=1) < inlier_thresh ** 2).sum())
    transform = RigidTransform(r, t)
    return RegistrationReport(transform, count, count / n, n_correspondences=n, iterations=done)


# ------------------------------------------------------ coarse-to-fine pipeline

def collect_correspondences(p: CloudFeatures, q: CloudFeatures, cfg: MatchingConfig | None = None):
    """Patch matching followed by per-patch optimal-transport point matching.

    Returns an (N, 2) array of unique (fine index in p, fine index in q) pairs.
    """
    cfg = cfg or MatchingConfig()
    h = gaussian_correlation(p.patch.data, q.patch.data)
    matches = topk_patch_matches(dual_normalize(h), cfg.n_c)
    pairs = matches.pairs
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    groups_p = [p.ms.fine_of[i] for i in pairs[:, 0]]
    groups_q = [q.ms.fine_of[j] for j in pairs[:, 1]]
    sizes_p = np.array([len(g) for g in groups_p])
    sizes_q = np.array([len(g) for g in groups_q])
    out = []
    # bucket by padded size to keep the batched Sinkhorn compact
    nmax, mmax = int(sizes_p.max()), int(sizes_q.max())
    chunk = max(1, int(2_000_000 // ((nmax + 1) * (mmax + 1))))
    for start in range(0, len(pairs), chunk):
        sl = slice(start, start + chunk)
        gp, gq = groups_p[sl], groups_q[sl]
        bsz = len(gp)
        scores = np.zeros((bsz, nmax, mmax))
        for b in range(bsz):
            scores[b, :len(gp[b]), :len(gq[b])] = cost_matrix(p.point.data[gp[b]], q.point.data[gq[b]])
        with np.errstate(invalid="ignore", divide="ignore"):
            z = sinkhorn_batch(scores, sizes_p[sl], sizes_q[sl], cfg.alpha, cfg.sinkhorn_iters)
        for b in range(bsz):
            n_i, m_j = len(gp[b]), len(gq[b])
            zb = z[b, :n_i, :m_j]
            local = mutual_topk_point_matches(zb, cfg.k, has_dustbin=False)
            if len(local):
                out.append(np.stack([gp[b][local[:, 0]], gq[b][local[:, 1]]], axis=1))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(out), axis=0)


def register(p: CloudFeatures, q: CloudFeatures, matching: MatchingConfig | None = None,
             ransac: RansacConfig | None = None, t_gt: RigidTransform | None = None) -> RegistrationReport:
    """Estimate T with T(p) ≈ q."""
    matching = matching or MatchingConfig()
    ransac = ransac or RansacConfig()
    pairs = collect_correspondences(p, q, matching)
    if len(pairs) == 0:
        raise RegistrationError("empty correspondence pool", {"n_correspondences": 0})
    corr = CorrespondenceSet(p.ms.fine.points[pairs[:, 0]], q.ms.fine.points[pairs[:, 1]])
    thresh = ransac.inlier_thresh
    if thresh is None:
        thresh = max(p.ms.voxel_size, q.ms.voxel_size)
        if not np.isfinite(thresh):
            raise RegadError("inlier threshold unset and voxel size unknown")
    report = ransac_transform(corr, ransac.iters, thresh, ransac.seed, ransac.confidence)
    if t_gt is not None:
        report.rre_deg, report.rte = registration_error(report.transform, t_gt)
    return report


def registration_error(t: RigidTransform, t_gt: RigidTransform):
    """(rotation error in degrees, translation error)."""
    rel = t.rotation.T @ t_gt.rotation
    cos = (np.trace(rel) - 1.0) / 2.0
    axis = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]]) / 2.0
    angle = math.atan2(float(np.linalg.norm(axis)), float(np.clip(cos, -1.0, 1.0)))
    rte = float(np.linalg.norm(t.translation - t_gt.translation))
    return math.degrees(angle), rte
