"""Rotation-invariant local descriptors and feature containers.

The built-in descriptor is an FPFH-style histogram over Darboux-frame angles.
Learned features can be supplied instead through :func:`load_features`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import FeatureFormatError, RegadError
from .geometry import MultiScaleCloud, PointCloud, _as_points, knn_indices
from .io import LEVELS, read_features, write_features

__all__ = [
    "FeatureMatrix",
    "DescriptorConfig",
    "estimate_normals",
    "compute_local_features",
    "patch_features",
    "load_features",
    "save_features",
    "CloudFeatures",
    "describe",
]


@dataclass(eq=False)
class FeatureMatrix:
    data: np.ndarray
    level: str = "local"

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise FeatureFormatError("feature matrix must be 2-D")
        if not np.all(np.isfinite(d)):
            raise FeatureFormatError("non-finite feature value")
        if self.level not in LEVELS:
            raise FeatureFormatError(f"unknown feature level {self.level!r}")
        self.data = d

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass
class DescriptorConfig:
    neighbor_k: int = 32
    angle_bins: int = 11
    normal_k: int = 16

    def __post_init__(self):
        if min(self.neighbor_k, self.angle_bins, self.normal_k) < 1:
            raise RegadError("descriptor parameters must be positive")

    @property
    def dim(self):
        return 3 * self.angle_bins


def _orient_tie(normals):
    # first non-negligible component positive
    idx = np.argmax(np.abs(normals) > 1e-12, axis=1)
    s = np.sign(normals[np.arange(len(normals)), idx])
    s[s == 0] = 1.0
    return normals * s[:, None]


def estimate_normals(cloud, normal_k: int = 16, tree=None) -> np.ndarray:
    """PCA normals oriented away from the cloud centroid."""
    pts = _as_points(cloud)
    n = pts.shape[0]
    if normal_k < 3:
        raise RegadError("normal_k must be >= 3")
    if n < normal_k:
        raise RegadError(f"cloud has {n} points, fewer than normal_k={normal_k}")
    idx, _ = knn_indices(pts, pts, normal_k, tree=tree)
    nb = pts[idx]
    centred = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / normal_k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    rel = pts - pts.mean(axis=0)
    side = np.einsum("ij,ij->i", normals, rel)
    scale = np.linalg.norm(rel, axis=1) + 1e-300
    tie = np.abs(side) <= 1e-12 * np.maximum(scale, 1.0)
    normals[~tie & (side < 0)] *= -1.0
    if tie.any():
        normals[tie] = _orient_tie(normals[tie])
    return normals


def _bin(values, lo, hi, bins):
    b = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(b, 0, bins - 1)


def _darboux_angles(ps, ns, pt, nt):
    """(alpha, phi, theta) for source points/normals ps, ns against targets pt, nt."""
    d = pt - ps
    dist = np.sqrt(np.sort(d * d, axis=-1).sum(axis=-1))
    safe = np.where(dist > 0, dist, 1.0)
    dh = d / safe[..., None]
    u = np.broadcast_to(ns, d.shape)
    v = np.cross(u, dh)
    vn = np.linalg.norm(v, axis=-1)
    v = np.where(vn[..., None] > 1e-12, v / np.where(vn > 0, vn, 1.0)[..., None], 0.0)
    w = np.cross(u, v)
    alpha = np.einsum("...i,...i->...", v, nt)
    phi = np.einsum("...i,...i->...", u, dh)
    theta = np.arctan2(np.einsum("...i,...i->...", w, nt), np.einsum("...i,...i->...", u, nt))
    return alpha, phi, theta, dist


def _neighbours_without_self(pts, k, tree):
    idx, dist = knn_indices(pts, pts, k + 1, tree=tree)
    is_self = idx == np.arange(len(pts))[:, None]
    order = np.argsort(is_self, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(dist, order, axis=1)


def compute_local_features(cloud, cfg: DescriptorConfig | None = None, normals=None) -> FeatureMatrix:
    """FPFH-style descriptor, one L1-normalised row of ``3 * angle_bins`` per point."""
    cfg = cfg or DescriptorConfig()
    pts = _as_points(cloud)
    n = pts.shape[0]
    if n <= cfg.neighbor_k:
        raise RegadError(f"need more than neighbor_k={cfg.neighbor_k} points, got {n}")
    tree = cKDTree(pts)
    if normals is None:
        normals = estimate_normals(pts, min(cfg.normal_k, n), tree=tree)
    k, bins = cfg.neighbor_k, cfg.angle_bins
    nbr, _ = _neighbours_without_self(pts, k, tree)

    alpha, phi, theta, dist = _darboux_angles(pts[:, None, :], normals[:, None, :], pts[nbr], normals[nbr])
    spfh = np.zeros((n, 3 * bins))
    rows = np.repeat(np.arange(n), k)
    for j, (vals, lo, hi) in enumerate(((alpha, -1.0, 1.0), (phi, -1.0, 1.0), (theta, -np.pi, np.pi))):
        cols = j * bins + _bin(vals.reshape(-1), lo, hi, bins)
        np.add.at(spfh, (rows, cols), 1.0)
    spfh /= k

    weights = 1.0 / np.maximum(dist, 1e-12)
    fpfh = spfh + np.einsum("nk,nkd->nd", weights, spfh[nbr]) / k
    fpfh /= fpfh.sum(axis=1, keepdims=True)
    return FeatureMatrix(fpfh, "local")


def patch_features(local, ms: MultiScaleCloud) -> FeatureMatrix:
    """Mean-pool fine rows per patch, then L2-normalise each patch row."""
    data = np.asarray(local, dtype=np.float64)
    if data.shape[0] != ms.n_fine:
        raise RegadError("feature/cloud size mismatch")
    sums = np.zeros((ms.n_coarse, data.shape[1]))
    np.add.at(sums, ms.patch_of, data)
    counts = np.bincount(ms.patch_of, minlength=ms.n_coarse).astype(np.float64)
    means = sums / counts[:, None]
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    return FeatureMatrix(means / np.where(norms > 0, norms, 1.0), "patch")


def load_features(path, expected_rows: int | None = None) -> FeatureMatrix:
    data, level = read_features(path)
    if expected_rows is not None and data.shape[0] != expected_rows:
        raise FeatureFormatError("feature/cloud size mismatch")
    return FeatureMatrix(data, level)


def save_features(path, features: FeatureMatrix):
    write_features(path, features.data, features.level)


@dataclass(eq=False)
class CloudFeatures:
    """A multi-scale cloud together with its local, point and patch features."""

    ms: MultiScaleCloud
    local: FeatureMatrix
    point: FeatureMatrix
    patch: FeatureMatrix

    def __post_init__(self):
        if self.local.rows != self.ms.n_fine or self.point.rows != self.ms.n_fine:
            raise FeatureFormatError("feature/cloud size mismatch")
        if self.patch.rows != self.ms.n_coarse:
            raise FeatureFormatError("feature/cloud size mismatch")


def describe(ms: MultiScaleCloud, cfg: DescriptorConfig | None = None,
             local=None, point=None, patch=None) -> CloudFeatures:
    """Attach features to ``ms``; missing levels are derived from the local features.

    Without external ``local`` features the built-in descriptor is used.  Point
    features default to the local ones and patch features to their pooled mean.
    """
    if local is None:
        local = compute_local_features(ms.fine, cfg)
    elif not isinstance(local, FeatureMatrix):
        local = FeatureMatrix(local, "local")
    if local.rows != ms.n_fine:
        raise FeatureFormatError("feature/cloud size mismatch")
    if point is None:
        point = FeatureMatrix(local.data, "point")
    elif not isinstance(point, FeatureMatrix):
        point = FeatureMatrix(point, "point")
    if patch is None:
        patch = patch_features(local, ms)
    elif not isinstance(patch, FeatureMatrix):
        patch = FeatureMatrix(patch, "patch")
    return CloudFeatures(ms, local, point, patch)
