"""Point clouds, rigid transforms, neighbour search and multi-scale decomposition."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import EmptyInputError, RegadError

__all__ = [
    "PointCloud",
    "RigidTransform",
    "MultiScaleCloud",
    "KnnResult",
    "pairwise_distances",
    "knn",
    "knn_indices",
    "nearest_indices",
    "voxel_downsample",
    "adaptive_voxel_size",
    "group_points",
    "build_multiscale",
    "apply_transform",
    "random_rigid",
]


@dataclass(eq=False)
class PointCloud:
    """An ordered set of 3D points with optional per-point labels (0 normal, 1 anomalous)."""

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise RegadError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise RegadError("point coordinates must be finite")
        self.points = pts
        if self.labels is not None:
            lab = np.asarray(self.labels).astype(np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise RegadError("labels must have the same length as points")
            if lab.size and not np.all((lab == 0) | (lab == 1)):
                raise RegadError("labels must be 0 or 1")
            self.labels = lab

    def __len__(self):
        return self.points.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)


@dataclass(eq=False)
class RigidTransform:
    """x -> rotation @ x + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise RegadError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise RegadError("transform entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise RegadError("rotation must be orthonormal with determinant +1")
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise RegadError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self, homogeneous=False):
        m = np.hstack([self.rotation, self.translation[:, None]])
        if homogeneous:
            m = np.vstack([m, [0.0, 0.0, 0.0, 1.0]])
        return m

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


@dataclass(eq=False)
class KnnResult:
    indices: np.ndarray
    distances: np.ndarray


@dataclass(eq=False)
class MultiScaleCloud:
    """Fine cloud, coarse nodes, and the point-to-node partition between them.

    ``patch_of[i]`` is the coarse node owning fine point ``i``; ``fine_of[j]``
    lists (ascending) the fine points owned by node ``j``.
    """

    fine: PointCloud
    coarse: PointCloud
    patch_of: np.ndarray
    fine_of: list
    voxel_size: float = float("nan")

    @property
    def n_fine(self):
        return len(self.fine)

    @property
    def n_coarse(self):
        return len(self.coarse)


def _as_points(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def pairwise_distances(a, b):
    """Euclidean distances with a coordinate-order independent summation.

    Squared differences are sorted before summing so the result is bitwise
    invariant to permuting or negating coordinate axes.
    """
    diff = np.asarray(a, dtype=np.float64)[..., :, None, :] - np.asarray(b, dtype=np.float64)[..., None, :, :]
    return np.sqrt(np.sort(diff * diff, axis=-1).sum(axis=-1))


def _point_distances(points, queries, idx):
    diff = points[idx] - queries[:, None, :]
    return np.sqrt(np.sort(diff * diff, axis=-1).sum(axis=-1))


def knn_indices(points, queries, k, tree=None):
    """Exact k nearest neighbours for every query row.

    Returns ``(indices, distances)`` of shape ``(len(queries), k)``; neighbours are
    ordered by ascending distance with ties broken by the lower index.
    """
    points = _as_points(points)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if k < 1:
        raise RegadError("k must be >= 1")
    if k > n:
        raise RegadError(f"k={k} exceeds cloud size {n}")
    nq = queries.shape[0]
    if nq == 0:
        return np.zeros((0, k), dtype=np.int64), np.zeros((0, k))
    if tree is None:
        tree = cKDTree(points)
    kk = min(n, k + 1)
    _, cand = tree.query(queries, k=kk)
    cand = np.asarray(cand, dtype=np.int64).reshape(nq, kk)
    dist = _point_distances(points, queries, cand)
    order = np.lexsort((cand, dist), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    idx_out = cand[:, :k].copy()
    dist_out = dist[:, :k].copy()
    if kk > k:
        # rows where the k-th and (k+1)-th candidates might tie need the full tied set
        kth = dist[:, k - 1]
        suspect = dist[:, k] <= kth * (1 + 1e-9) + 1e-300
        for r in np.flatnonzero(suspect):
            radius = kth[r] * (1 + 1e-9) + 1e-12
            ball = np.asarray(tree.query_ball_point(queries[r], radius), dtype=np.int64)
            d = _point_distances(points, queries[r:r + 1], ball[None, :])[0]
            o = np.lexsort((ball, d))[:k]
            idx_out[r] = ball[o]
            dist_out[r] = d[o]
    return idx_out, dist_out


def nearest_indices(points, queries, tree=None):
    """Index of the nearest point for each query (ties -> lowest index)."""
    idx, _ = knn_indices(points, queries, 1, tree=tree)
    return idx[:, 0]


def knn(cloud, query, k: int) -> KnnResult:
    idx, dist = knn_indices(cloud, np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return KnnResult(idx[0], dist[0])


def voxel_downsample(cloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel, in ascending lexicographic voxel order.

    Labels, when present, are carried over as the max label inside each voxel.
    """
    if not voxel_size > 0:
        raise RegadError("voxel_size must be positive")
    pts = _as_points(cloud)
    if pts.shape[0] == 0:
        raise EmptyInputError("empty input")
    keys = np.floor(pts / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = counts.shape[0]
    sums = np.zeros((m, 3))
    np.add.at(sums, inverse, pts)
    out = sums / counts[:, None]
    labels = None
    if isinstance(cloud, PointCloud) and cloud.labels is not None:
        labels = np.zeros(m, dtype=np.int64)
        np.maximum.at(labels, inverse, cloud.labels)
    return PointCloud(out, labels)


def _voxel_count(pts, v):
    keys = np.floor(pts / v).astype(np.int64)
    return np.unique(keys, axis=0).shape[0]


def adaptive_voxel_size(cloud, target_n: int, rel_tol: float = 0.02, max_iters: int = 40) -> float:
    """Bisect the voxel size so the downsampled count lands near ``target_n``."""
    pts = _as_points(cloud)
    n = pts.shape[0]
    if n == 0:
        raise EmptyInputError("empty input")
    if target_n > n:
        raise RegadError("target exceeds cloud size")
    if target_n < 1:
        raise RegadError("target_n must be >= 1")
    if not 0 < rel_tol < 0.5:
        raise RegadError("rel_tol must lie in (0, 0.5)")
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diag == 0.0:
        diag = 1.0
    lo, hi = diag / 10000.0, diag
    tol = rel_tol * target_n
    count_lo = _voxel_count(pts, lo)
    if count_lo == target_n:
        return lo
    best_v, best_err = lo, abs(count_lo - target_n)
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        c = _voxel_count(pts, mid)
        err = abs(c - target_n)
        if err < best_err or (err == best_err and mid < best_v):
            best_v, best_err = mid, err
        if err <= tol:
            return mid
        if c > target_n:
            lo = mid
        else:
            hi = mid
    return best_v


def group_points(fine, coarse, voxel_size: float = float("nan")) -> MultiScaleCloud:
    """Assign every fine point to its nearest coarse node."""
    fine = fine if isinstance(fine, PointCloud) else PointCloud(fine)
    coarse = coarse if isinstance(coarse, PointCloud) else PointCloud(coarse)
    if len(coarse) == 0:
        raise EmptyInputError("coarse cloud is empty")
    patch_of = nearest_indices(coarse.points, fine.points)
    order = np.argsort(patch_of, kind="stable")
    bounds = np.searchsorted(patch_of[order], np.arange(len(coarse) + 1))
    fine_of = [order[bounds[j]:bounds[j + 1]] for j in range(len(coarse))]
    return MultiScaleCloud(fine, coarse, patch_of, fine_of, float(voxel_size))


def build_multiscale(cloud, target_fine: int, coarse_factor: float = 8.0, rel_tol: float = 0.02) -> MultiScaleCloud:
    if not coarse_factor > 1:
        raise RegadError("coarse_factor must be > 1")
    cloud = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    v = adaptive_voxel_size(cloud, target_fine, rel_tol)
    fine = voxel_downsample(cloud, v)
    coarse = voxel_downsample(fine.points, v * coarse_factor)
    ms = group_points(fine, coarse, v)
    # empty patches can appear when a centroid lies closer to a foreign cluster
    keep = np.array([len(g) > 0 for g in ms.fine_of])
    if not keep.all():
        ms = group_points(fine, PointCloud(coarse.points[keep]), v)
    return ms


def apply_transform(cloud, t: RigidTransform) -> PointCloud:
    if isinstance(cloud, PointCloud):
        return PointCloud(t.apply(cloud.points), None if cloud.labels is None else cloud.labels.copy())
    return PointCloud(t.apply(cloud))


def rotation_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    r = np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)
    # re-orthonormalise to machine precision
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def random_rigid(seed: int, max_angle: float = np.pi, max_translation: float = 0.0) -> RigidTransform:
    """Uniform random axis, angle ~ U[0, max_angle], translation ~ U[-mt, mt]^3."""
    if not 0 <= max_angle <= np.pi:
        raise RegadError("max_angle must lie in [0, pi]")
    if max_translation < 0:
        raise RegadError("max_translation must be >= 0")
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.normal(size=3)
    angle = rng.uniform(0.0, max_angle)
    trans = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(rotation_from_axis_angle(axis, angle), trans)
