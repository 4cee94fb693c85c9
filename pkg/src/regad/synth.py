"""Synthetic shapes with controllable surface defects.

Two base shapes are available: ``sphere-bumps`` (unit sphere carrying six
Gaussian bumps of different size at irregular positions, so the shape has no
rotational symmetry) and ``plane-dents`` (a square patch with a few Gaussian
dents).  Normal samples are fresh random surface samplings of the base shape;
anomalous samples additionally lift a contiguous surface region along its
normals.
"""

from __future__ import annotations

import numpy as np

from .exceptions import RegadError
from .geometry import PointCloud, knn_indices

SHAPES = ("sphere-bumps", "plane-dents")

# (direction, height, angular width)
_BUMPS = (
    ((0.0, 0.0, 1.0), 0.35, 0.30),
    ((0.9, 0.1, 0.3), 0.25, 0.40),
    ((-0.4, 0.85, -0.1), 0.18, 0.25),
    ((-0.5, -0.6, 0.55), 0.30, 0.22),
    ((0.2, -0.7, -0.7), 0.22, 0.35),
    ((-0.8, 0.1, -0.6), 0.12, 0.45),
)

_DENTS = (
    ((0.35, 0.30), 0.20, 0.18),
    ((-0.45, 0.10), 0.12, 0.25),
    ((0.05, -0.50), 0.16, 0.14),
    ((-0.30, -0.55), 0.08, 0.30),
)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _sphere_radius(dirs):
    r = np.ones(dirs.shape[0])
    for centre, height, width in _BUMPS:
        ang = np.arccos(np.clip(dirs @ _unit(centre), -1.0, 1.0))
        r += height * np.exp(-0.5 * (ang / width) ** 2)
    return r


def _plane_height(xy):
    z = np.zeros(xy.shape[0])
    for centre, depth, width in _DENTS:
        d2 = ((xy - np.asarray(centre)) ** 2).sum(axis=1)
        z -= depth * np.exp(-0.5 * d2 / width ** 2)
    return z


def sample_shape(shape: str, n_points: int, rng) -> np.ndarray:
    """Random surface sample of a base shape, (n_points, 3)."""
    if shape == "sphere-bumps":
        dirs = _unit(rng.normal(size=(n_points, 3)))
        return dirs * _sphere_radius(dirs)[:, None]
    if shape == "plane-dents":
        xy = rng.uniform(-1.0, 1.0, size=(n_points, 2))
        return np.column_stack([xy, _plane_height(xy)])
    raise RegadError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def surface_normals(shape: str, points: np.ndarray) -> np.ndarray:
    """Outward normals of the base shape by central differences."""
    eps = 1e-5
    if shape == "sphere-bumps":
        dirs = _unit(points)
        # tangent basis per point
        helper = np.where(np.abs(dirs[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
        t1 = _unit(np.cross(dirs, helper))
        t2 = np.cross(dirs, t1)

        def surf(d):
            d = _unit(d)
            return d * _sphere_radius(d)[:, None]

        du = surf(dirs + eps * t1) - surf(dirs - eps * t1)
        dv = surf(dirs + eps * t2) - surf(dirs - eps * t2)
        n = _unit(np.cross(du, dv))
        flip = np.einsum("ij,ij->i", n, dirs) < 0
        n[flip] *= -1
        return n
    if shape == "plane-dents":
        xy = points[:, :2]
        gx = (_plane_height(xy + [eps, 0.0]) - _plane_height(xy - [eps, 0.0])) / (2 * eps)
        gy = (_plane_height(xy + [0.0, eps]) - _plane_height(xy - [0.0, eps])) / (2 * eps)
        return _unit(np.column_stack([-gx, -gy, np.ones_like(gx)]))
    raise RegadError(f"unknown shape {shape!r}")


def nominal_spacing(shape: str, n_fine: int) -> float:
    """Approximate fine-level point spacing for ``n_fine`` points on the shape."""
    area = 4.0 * np.pi * 1.15 if shape == "sphere-bumps" else 4.0
    return float(np.sqrt(area / n_fine))


def make_normal(shape: str, n_points: int, seed: int) -> PointCloud:
    rng = np.random.default_rng(seed)
    pts = sample_shape(shape, n_points, rng)
    return PointCloud(pts, np.zeros(n_points, dtype=np.int64))


def make_anomalous(shape: str, n_points: int, seed: int, defect_fraction: float = 0.05,
                   spacing: float | None = None, magnitude=(5.0, 15.0)) -> PointCloud:
    """Lift a contiguous ``defect_fraction`` of the surface along its normals.

    The displacement is a seeded multiple (``magnitude`` range) of ``spacing``.
    """
    if not 0 < defect_fraction <= 0.2:
        raise RegadError("defect_fraction must lie in (0, 0.2]")
    rng = np.random.default_rng(seed)
    pts = sample_shape(shape, n_points, rng)
    if spacing is None:
        spacing = nominal_spacing(shape, 4096)
    n_defect = max(1, int(round(defect_fraction * n_points)))
    centre = pts[rng.integers(n_points)]
    idx, _ = knn_indices(pts, centre[None, :], n_defect)
    idx = idx[0]
    lift = rng.uniform(*magnitude) * spacing
    normals = surface_normals(shape, pts[idx])
    pts = pts.copy()
    pts[idx] += lift * normals
    labels = np.zeros(n_points, dtype=np.int64)
    labels[idx] = 1
    return PointCloud(pts, labels)
