"""Test-time scoring against a memory bank."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .descriptor import CloudFeatures, DescriptorConfig, describe
from .exceptions import RegadError, RegistrationError
from .geometry import PointCloud, RigidTransform, _as_points, build_multiscale, knn_indices, nearest_indices
from .memorybank import MemoryBank, fuse
from .registration import MatchingConfig, RansacConfig, register

__all__ = [
    "AnomalyConfig",
    "AnomalyResult",
    "filter_mask",
    "point_scores",
    "propagate_scores",
    "smooth_scores",
    "fine_labels",
    "detect",
]


@dataclass
class AnomalyConfig:
    filter_k: int = 8
    smooth_n: int = 9


@dataclass(eq=False)
class AnomalyResult:
    point_scores: np.ndarray
    object_score: float
    filter_mask: np.ndarray
    transform_used: RigidTransform
    fine_points: np.ndarray = field(default=None, repr=False)
    inlier_ratio: float = float("nan")

    def to_dict(self):
        return {
            "object_score": float(self.object_score),
            "point_scores": [float(s) for s in self.point_scores],
            "transform": self.transform_used.matrix().tolist(),
            "filtered": int(self.filter_mask.sum()),
            "inlier_ratio": float(self.inlier_ratio),
        }


def filter_mask(fine, k: int = 8) -> np.ndarray:
    """Keep points that are the nearest member of their own k-neighbourhood to its centroid."""
    pts = _as_points(fine)
    n = pts.shape[0]
    if k < 2:
        raise RegadError("k must be >= 2")
    if k > n:
        raise RegadError(f"k={k} exceeds cloud size {n}")
    idx, _ = knn_indices(pts, pts, k)
    nb = pts[idx]
    mu = nb.mean(axis=1)
    d = np.sqrt(((nb - mu[:, None, :]) ** 2).sum(axis=-1))
    own = np.sqrt(((pts - mu) ** 2).sum(axis=-1))
    return own <= d.min(axis=1) + 1e-12


def point_scores(fused_rows, bank: MemoryBank) -> np.ndarray:
    return bank.distances(fused_rows)


def propagate_scores(fine, mask, filtered_scores) -> np.ndarray:
    """Unfiltered points inherit the score of their nearest filtered point."""
    pts = _as_points(fine)
    mask = np.asarray(mask, dtype=bool)
    s = np.asarray(filtered_scores, dtype=np.float64)
    if mask.shape[0] != pts.shape[0]:
        raise RegadError("mask length does not match cloud")
    keep = np.flatnonzero(mask)
    if len(keep) == 0:
        raise RegadError("no filtered points")
    if s.shape[0] != len(keep):
        raise RegadError("one score per filtered point expected")
    out = np.empty(pts.shape[0])
    out[keep] = s
    rest = np.flatnonzero(~mask)
    if len(rest):
        out[rest] = s[nearest_indices(pts[keep], pts[rest])]
    return out


def smooth_scores(fine, scores, n: int = 9) -> np.ndarray:
    """Mean of the scores over each point's n nearest neighbours (self included)."""
    pts = _as_points(fine)
    s = np.asarray(scores, dtype=np.float64)
    if n < 1:
        raise RegadError("n must be >= 1")
    if n > pts.shape[0]:
        raise RegadError(f"n={n} exceeds cloud size {pts.shape[0]}")
    if n == 1:
        return s.copy()
    idx, _ = knn_indices(pts, pts, n)
    return s[idx].mean(axis=1)


def fine_labels(original: PointCloud, fine_points) -> np.ndarray:
    """Label of the nearest original point for every fine point."""
    if original.labels is None:
        raise RegadError("cloud carries no labels")
    return original.labels[nearest_indices(original.points, _as_points(fine_points))]


def score_aligned(features: CloudFeatures, transform: RigidTransform, bank: MemoryBank,
                  cfg: AnomalyConfig | None = None, inlier_ratio: float = float("nan")) -> AnomalyResult:
    """Scoring stage once the test sample's alignment to the template is known."""
    cfg = cfg or AnomalyConfig()
    fine = features.ms.fine.points
    aligned = transform.apply(fine)
    rows = fuse(features.local.data, aligned, bank.params)
    mask = filter_mask(fine, cfg.filter_k)
    s = point_scores(rows[mask], bank)
    full = propagate_scores(fine, mask, s)
    smooth = smooth_scores(fine, full, cfg.smooth_n)
    return AnomalyResult(smooth, float(smooth.max()), mask, transform, fine, inlier_ratio)


def detect(test, template: CloudFeatures, bank: MemoryBank, cfg: AnomalyConfig | None = None,
           target_fine: int = 4096, coarse_factor: float = 8.0, descriptor: DescriptorConfig | None = None,
           matching: MatchingConfig | None = None, ransac: RansacConfig | None = None) -> AnomalyResult:
    """Describe, register onto the template and score one test cloud.

    ``test`` may be a raw cloud or an already described :class:`CloudFeatures`.
    """
    if isinstance(test, CloudFeatures):
        feats = test
    else:
        cloud = test if isinstance(test, PointCloud) else PointCloud(test)
        feats = describe(build_multiscale(cloud, min(target_fine, len(cloud)), coarse_factor), descriptor)
    if feats.local.dim + 3 != bank.fused_dim:
        raise RegadError("feature dimension does not match the memory bank")
    try:
        rep = register(feats, template, matching, ransac)
    except RegistrationError as exc:
        raise RegistrationError("registration to template failed", exc.diagnostics) from exc
    return score_aligned(feats, rep.transform, bank, cfg, rep.inlier_ratio)
