"""Transformed training pairs and ground-truth patch / point correspondences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import RegadError
from .geometry import MultiScaleCloud, PointCloud, RigidTransform, _as_points, apply_transform, random_rigid
from .matching import PatchMatchSet

__all__ = [
    "PointMatchSet",
    "make_pair",
    "patch_overlap",
    "overlap_matrix",
    "gt_patch_matches",
    "gt_point_matches",
]


@dataclass(eq=False)
class PointMatchSet:
    """Fine-point pairs inside one patch pair; indices are local to each patch."""

    patch_pair: tuple
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        self.patch_pair = (int(self.patch_pair[0]), int(self.patch_pair[1]))
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return self.pairs.shape[0]


def make_pair(cloud, seed: int, max_angle: float = np.pi, max_translation: float = 0.0):
    """Return ``(P, Q, T)`` with ``Q = T(P)`` for a seeded random rigid ``T``."""
    p = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    t = random_rigid(seed, max_angle, max_translation)
    return p, apply_transform(p, t), t


def patch_overlap(patch_p, patch_q, t_gt: RigidTransform, radius: float) -> float:
    """Fraction of ``T(patch_p)`` points with a ``patch_q`` point closer than ``radius``."""
    a = _as_points(patch_p)
    b = _as_points(patch_q)
    if len(a) == 0 or len(b) == 0:
        raise RegadError("patches must be non-empty")
    if not radius > 0:
        raise RegadError("radius must be positive")
    moved = t_gt.apply(a)
    d, _ = cKDTree(b).query(moved, k=1)
    return float(np.mean(d < radius))


def overlap_matrix(ms_p: MultiScaleCloud, ms_q: MultiScaleCloud, t_gt: RigidTransform, radius: float) -> np.ndarray:
    """All directional patch overlaps at once, shape (|P̂|, |Q̂|).

    Entry (i, j) equals ``patch_overlap(G_i^P, G_j^Q, t_gt, radius)``.
    """
    if not radius > 0:
        raise RegadError("radius must be positive")
    moved = t_gt.apply(ms_p.fine.points)
    tree = cKDTree(ms_q.fine.points)
    hits = tree.query_ball_point(moved, r=radius)
    out = np.zeros((ms_p.n_coarse, ms_q.n_coarse))
    # query_ball_point is inclusive; keep the strict inequality
    for a, nbrs in enumerate(hits):
        if not nbrs:
            continue
        nbrs = np.asarray(nbrs)
        d = np.linalg.norm(ms_q.fine.points[nbrs] - moved[a], axis=1)
        patches = np.unique(ms_q.patch_of[nbrs[d < radius]])
        out[ms_p.patch_of[a], patches] += 1.0
    sizes = np.bincount(ms_p.patch_of, minlength=ms_p.n_coarse).astype(np.float64)
    return out / sizes[:, None]


def gt_patch_matches(ms_p: MultiScaleCloud, ms_q: MultiScaleCloud, t_gt: RigidTransform,
                     radius: float | None = None, threshold: float = 0.1) -> PatchMatchSet:
    """Patch pairs whose overlap ratio exceeds ``threshold``, in row-major order."""
    if not 0.0 <= threshold < 1.0:
        raise RegadError("threshold must lie in [0, 1)")
    if radius is None:
        radius = ms_p.voxel_size
    o = overlap_matrix(ms_p, ms_q, t_gt, radius)
    rows, cols = np.nonzero(o > threshold)
    return PatchMatchSet(np.stack([rows, cols], axis=1), o[rows, cols])


def gt_point_matches(ms_p: MultiScaleCloud, ms_q: MultiScaleCloud, t_gt: RigidTransform,
                     patch_matches: PatchMatchSet, n_g: int = 128, t: float | None = None,
                     seed: int = 0) -> list:
    """Sample up to ``n_g`` patch pairs and list their fine pairs closer than ``t`` under ``t_gt``."""
    if n_g < 1:
        raise RegadError("n_g must be >= 1")
    if t is None:
        t = ms_p.voxel_size
    if not t > 0:
        raise RegadError("t must be positive")
    if len(patch_matches) == 0:
        raise RegadError("no patch matches")
    rng = np.random.default_rng(seed)
    count = min(n_g, len(patch_matches))
    chosen = np.sort(rng.choice(len(patch_matches), size=count, replace=False))
    out = []
    for c in chosen:
        i, j = patch_matches.pairs[c]
        gp = t_gt.apply(ms_p.fine.points[ms_p.fine_of[i]])
        gq = ms_q.fine.points[ms_q.fine_of[j]]
        d = np.sqrt(((gp[:, None, :] - gq[None, :, :]) ** 2).sum(axis=-1))
        out.append(PointMatchSet((i, j), np.argwhere(d < t)))
    return out
