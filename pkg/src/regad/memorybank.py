"""Memory bank of fused normal features with greedy k-center subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import RegadError, RegistrationError
from .geometry import RigidTransform
from .io import read_bank, write_bank
from .registration import register

__all__ = [
    "NormalizationParams",
    "MemoryBank",
    "norm_params",
    "fuse",
    "coreset_greedy",
    "build_bank",
    "bank_from_aligned",
    "align_to_template",
    "nn_distance",
]


@dataclass(frozen=True)
class NormalizationParams:
    gamma_f: float
    gamma_c: float

    def __post_init__(self):
        for v in (self.gamma_f, self.gamma_c):
            if not (np.isfinite(v) and v > 0):
                raise RegadError("normalisation parameters must be positive and finite")


@dataclass(eq=False)
class MemoryBank:
    entries: np.ndarray
    params: NormalizationParams
    source_count: int = 0

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1:
            raise RegadError("memory bank needs at least one entry")
        if e.shape[1] < 4:
            raise RegadError("fused rows need feature and coordinate parts")
        if not np.all(np.isfinite(e)):
            raise RegadError("memory bank entries must be finite")
        self.entries = e
        self._tree = None

    @property
    def fused_dim(self):
        return self.entries.shape[1]

    def __len__(self):
        return self.entries.shape[0]

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.entries)
        return self._tree

    def distances(self, rows) -> np.ndarray:
        """Exact nearest-entry distance for every row."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != self.fused_dim:
            raise RegadError(f"row dim {rows.shape[1]} does not match bank dim {self.fused_dim}")
        d, idx = self.tree.query(rows, k=1)
        # recompute the winning distance directly so it is independent of tree arithmetic
        return np.sqrt(((rows - self.entries[idx]) ** 2).sum(axis=1))

    def save(self, path):
        write_bank(path, self.entries, self.params.gamma_f, self.params.gamma_c)

    @classmethod
    def load(cls, path):
        entries, gf, gc = read_bank(path)
        return cls(entries, NormalizationParams(float(gf), float(gc)), len(entries))


def _max_norm(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise RegadError("empty stack")
    m = float(np.sqrt((x * x).sum(axis=1)).max())
    return m if m > 0 else 1.0


def norm_params(all_train_features, all_train_coords) -> NormalizationParams:
    return NormalizationParams(_max_norm(all_train_features), _max_norm(all_train_coords))


def fuse(features, coords, params: NormalizationParams) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    c = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if f.shape[0] != c.shape[0]:
        raise RegadError("feature/coordinate count mismatch")
    return np.concatenate([f / params.gamma_f, c / params.gamma_c], axis=1)


def coreset_greedy(rows, rate: float, seed: int = 0) -> np.ndarray:
    """Farthest-point selection of ``max(1, ceil(rate * n))`` row indices."""
    x = np.asarray(rows, dtype=np.float64)
    n = x.shape[0]
    if n < 1:
        raise RegadError("need at least one row")
    if not 0 < rate <= 1:
        raise RegadError("rate must lie in (0, 1]")
    m = max(1, math.ceil(rate * n))
    rng = np.random.default_rng(seed)
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = rng.integers(n)
    best = np.sqrt(((x - x[chosen[0]]) ** 2).sum(axis=1))
    for s in range(1, m):
        nxt = int(np.argmax(best))  # first maximum on ties
        chosen[s] = nxt
        best = np.minimum(best, np.sqrt(((x - x[nxt]) ** 2).sum(axis=1)))
    return chosen


def nn_distance(bank: MemoryBank, row) -> float:
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    return float(bank.distances(row[None, :])[0])


def bank_from_aligned(samples, params: NormalizationParams | None = None, rate: float = 0.1,
                      seed: int = 0) -> MemoryBank:
    """Normalise, fuse and subsample already aligned ``(coords, features)`` samples."""
    samples = list(samples)
    if not samples:
        raise RegadError("need at least one training sample")
    coords = np.concatenate([np.asarray(c, dtype=np.float64).reshape(-1, 3) for c, _ in samples])
    feats = np.concatenate([np.asarray(f, dtype=np.float64) for _, f in samples])
    if params is None:
        params = norm_params(feats, coords)
    rows = fuse(feats, coords, params)
    keep = coreset_greedy(rows, rate, seed)
    return MemoryBank(rows[keep], params, rows.shape[0])


def align_to_template(train, template_index: int = 0, matching=None, ransac=None, names=None):
    """Register every training sample onto ``train[template_index]``.

    ``train`` holds :class:`~regad.descriptor.CloudFeatures`.  Returns the list
    of transforms (identity for the template itself).
    """
    train = list(train)
    if not train:
        raise RegadError("need at least one training sample")
    if not 0 <= template_index < len(train):
        raise RegadError("template_index out of range")
    template = train[template_index]
    out = []
    for i, sample in enumerate(train):
        if i == template_index:
            out.append(RigidTransform.identity())
            continue
        try:
            out.append(register(sample, template, matching, ransac).transform)
        except RegistrationError as exc:
            name = names[i] if names is not None else f"sample {i}"
            raise RegistrationError(f"registration failed for training {name}", exc.diagnostics) from exc
    return out


def build_bank(train, template_index: int = 0, rate: float = 0.1, seed: int = 0,
               matching=None, ransac=None, names=None) -> MemoryBank:
    """Align the training samples to the template, then fuse and subsample.

    Each sample contributes its aligned fine coordinates and local features.
    """
    train = list(train)
    transforms = align_to_template(train, template_index, matching, ransac, names)
    aligned = [(t.apply(s.ms.fine.points), s.local.data) for s, t in zip(train, transforms)]
    return bank_from_aligned(aligned, rate=rate, seed=seed)
