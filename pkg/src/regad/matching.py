"""Coarse patch matching and optimal-transport point matching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import RegadError

__all__ = [
    "PatchMatchSet",
    "gaussian_correlation",
    "dual_normalize",
    "topk_patch_matches",
    "cost_matrix",
    "augment_dustbin",
    "sinkhorn",
    "sinkhorn_batch",
    "mutual_topk_point_matches",
]


@dataclass(eq=False)
class PatchMatchSet:
    """Patch index pairs (row in P, row in Q) with one score per pair.

    For ground-truth sets the score is the overlap ratio; for predicted sets it
    is the dual-normalised correlation.
    """

    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    overlaps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.overlaps = np.asarray(self.overlaps, dtype=np.float64).reshape(-1)
        if self.pairs.shape[0] != self.overlaps.shape[0]:
            raise RegadError("pairs and overlaps must have equal length")

    def __len__(self):
        return self.pairs.shape[0]


def _mat(x):
    return np.asarray(x, dtype=np.float64)


def gaussian_correlation(fp, fq) -> np.ndarray:
    """h[i, j] = exp(-||fp_i - fq_j||^2)."""
    fp, fq = _mat(fp), _mat(fq)
    if fp.shape[1] != fq.shape[1]:
        raise RegadError("feature dimension mismatch")
    sq = ((fp[:, None, :] - fq[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-sq)


def dual_normalize(h) -> np.ndarray:
    h = _mat(h)
    return (h / h.sum(axis=1, keepdims=True)) * (h / h.sum(axis=0, keepdims=True))


def topk_patch_matches(hbar, n_c: int) -> PatchMatchSet:
    """The ``n_c`` largest entries, value-descending, ties in row-major order."""
    if n_c < 1:
        raise RegadError("n_c must be >= 1")
    hbar = _mat(hbar)
    flat = hbar.reshape(-1)
    order = np.argsort(-flat, kind="stable")[:min(n_c, flat.size)]
    rows, cols = np.divmod(order, hbar.shape[1])
    return PatchMatchSet(np.stack([rows, cols], axis=1), flat[order])


def cost_matrix(fi, fj) -> np.ndarray:
    """Similarity scores (fi @ fj.T) / dim fed to the transport layer."""
    fi, fj = _mat(fi), _mat(fj)
    if fi.shape[1] != fj.shape[1]:
        raise RegadError("feature dimension mismatch")
    return fi @ fj.T / fi.shape[1]


def augment_dustbin(c, alpha: float) -> np.ndarray:
    c = _mat(c)
    n, m = c.shape
    out = np.full((n + 1, m + 1), float(alpha))
    out[:n, :m] = c
    return out


def sinkhorn(c_star, iters: int = 100, anderson: int = 8, return_log=False):
    """Log-domain Sinkhorn on a dustbin-augmented score matrix.

    Real rows/columns carry unit mass; the dustbin row and column carry ``m``
    and ``n`` respectively.  Each iteration is one row and one column scaling.
    With ``anderson > 0`` the column potentials are extrapolated by Anderson
    mixing over that many past iterates (same fixed point, far fewer
    iterations on peaked score matrices); the iterate with the smallest row
    marginal error is returned.
    """
    c = _mat(c_star)
    if iters < 1:
        raise RegadError("iters must be >= 1")
    if c.ndim != 2 or min(c.shape) < 2:
        raise RegadError("score matrix must have at least one real row and column")
    if not np.all(np.isfinite(c)):
        raise RegadError("score matrix must be finite")
    n, m = c.shape[0] - 1, c.shape[1] - 1
    log_a = np.zeros(n + 1)
    log_a[-1] = np.log(m)
    log_b = np.zeros(m + 1)
    log_b[-1] = np.log(n)
    a = np.exp(log_a)

    v = np.zeros(m + 1)
    hist_v, hist_f = [], []
    best_err, best_u, best_v = np.inf, None, None
    for _ in range(iters):
        u = log_a - logsumexp(c + v[None, :], axis=1)
        g = log_b - logsumexp(c + u[:, None], axis=0)
        err = np.abs(np.exp(u + logsumexp(c + g[None, :], axis=1)) - a).max()
        if err < best_err:
            best_err, best_u, best_v = err, u, g
        elif err > 10.0 * best_err:
            # extrapolation diverged; restart from the best iterate
            hist_v, hist_f = [], []
            v = best_v
            continue
        if anderson <= 0:
            v = g
            continue
        f = g - v
        hist_v.append(v)
        hist_f.append(f)
        if len(hist_v) > anderson + 1:
            hist_v.pop(0)
            hist_f.pop(0)
        if len(hist_f) < 2:
            v = g
            continue
        df = np.diff(np.asarray(hist_f), axis=0).T
        dv = np.diff(np.asarray(hist_v), axis=0).T
        coef = np.linalg.lstsq(df, f, rcond=1e-12)[0]
        v_new = v + f - (dv + df) @ coef
        if np.all(np.isfinite(v_new)):
            v = v_new
        else:
            hist_v, hist_f = [], []
            v = g
    log_z = c + best_u[:, None] + best_v[None, :]
    z = np.exp(log_z)
    return (z, log_z) if return_log else z


def sinkhorn_batch(scores, n_rows, n_cols, alpha: float, iters: int = 100):
    """Batched Sinkhorn over padded real-score blocks.

    ``scores`` has shape (B, N, M); pair ``b`` uses the top-left
    ``n_rows[b] x n_cols[b]`` block.  The dustbin (score ``alpha``) is appended
    after the padding.  Returns (B, N+1, M+1) assignments with zeros in padding.

    When the score range is small enough for ``exp`` to stay well inside double
    precision the scaling is done on the kernel directly (same iterates as the
    log-domain form, an order of magnitude faster); otherwise in log domain.
    """
    scores = _mat(scores)
    bsz, nmax, mmax = scores.shape
    n_rows = np.asarray(n_rows)
    n_cols = np.asarray(n_cols)
    rmask = np.concatenate([np.arange(nmax)[None, :] < n_rows[:, None], np.ones((bsz, 1), bool)], axis=1)
    cmask = np.concatenate([np.arange(mmax)[None, :] < n_cols[:, None], np.ones((bsz, 1), bool)], axis=1)
    valid = rmask[:, :, None] & cmask[:, None, :]
    c = np.full((bsz, nmax + 1, mmax + 1), float(alpha))
    c[:, :nmax, :mmax] = scores
    a = rmask.astype(np.float64)
    a[:, -1] = n_cols
    b = cmask.astype(np.float64)
    b[:, -1] = n_rows

    span = np.ptp(np.where(valid, c, float(alpha)))
    if span < 60.0:
        shift = np.where(valid, c, -np.inf).max(axis=(1, 2), keepdims=True)
        k = np.where(valid, np.exp(c - shift), 0.0)
        v = cmask.astype(np.float64)
        for _ in range(iters):
            u = a / np.where(rmask, np.einsum("bij,bj->bi", k, v), 1.0)
            v = b / np.where(cmask, np.einsum("bji,bj->bi", k, u), 1.0)
        return u[:, :, None] * k * v[:, None, :]

    c = np.where(valid, c, -np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        log_a, log_b = np.log(a), np.log(b)
        u = np.zeros((bsz, nmax + 1))
        v = np.zeros((bsz, mmax + 1))
        for _ in range(iters):
            u = np.where(rmask, log_a - logsumexp(c + v[:, None, :], axis=2), -np.inf)
            v = np.where(cmask, log_b - logsumexp(c + u[:, :, None], axis=1), -np.inf)
        log_z = c + u[:, :, None] + v[:, None, :]
        return np.where(valid, np.exp(np.where(valid, log_z, 0.0)), 0.0)


def _topk_mask(z, k, axis):
    # rank entries along ``axis``: larger value first, lower index on ties
    order = np.argsort(-z, axis=axis, kind="stable")
    ranks = np.empty_like(order)
    idx = np.arange(z.shape[axis])
    if axis == 1:
        np.put_along_axis(ranks, order, np.broadcast_to(idx[None, :], z.shape), axis=1)
    else:
        np.put_along_axis(ranks, order, np.broadcast_to(idx[:, None], z.shape), axis=0)
    return ranks < k


def mutual_topk_point_matches(z, k: int, has_dustbin: bool = True) -> np.ndarray:
    """Pairs (a, b) where b is in row a's top-k and a is in column b's top-k."""
    if k < 1:
        raise RegadError("k must be >= 1")
    z = _mat(z)
    if has_dustbin:
        z = z[:-1, :-1]
    if z.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    keep = _topk_mask(z, k, 1) & _topk_mask(z, k, 0)
    return np.argwhere(keep).astype(np.int64)
