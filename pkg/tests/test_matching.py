import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regad.exceptions import RegadError
from regad.matching import (
    augment_dustbin,
    cost_matrix,
    dual_normalize,
    gaussian_correlation,
    mutual_topk_point_matches,
    sinkhorn,
    sinkhorn_batch,
    topk_patch_matches,
)


def _marginals(z):
    n, m = z.shape[0] - 1, z.shape[1] - 1
    a = np.r_[np.ones(n), m]
    b = np.r_[np.ones(m), n]
    return np.abs(z.sum(1) - a).max(), np.abs(z.sum(0) - b).max()


def test_sinkhorn_zero_scores_closed_form():
    # constant scores give the product plan a b^T / (n + m)
    z = sinkhorn(np.zeros((3, 4)), iters=200)
    a, b = np.array([1.0, 1.0, 3.0]), np.array([1.0, 1.0, 1.0, 2.0])
    assert np.allclose(z, np.outer(a, b) / 5.0, atol=1e-9)
    assert max(_marginals(z)) < 1e-9


def test_sinkhorn_diagonal_dominant():
    c = augment_dustbin(np.eye(4) * 20.0, 0.0)
    z = sinkhorn(c)
    assert np.array_equal(z[:4, :4].argmax(axis=1), np.arange(4))
    assert np.all(np.diag(z[:4, :4]) > 0.99)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10**6))
def test_sinkhorn_marginals_and_shift(n, m, seed):
    rng = np.random.default_rng(seed)
    c = augment_dustbin(rng.uniform(-5, 5, (n, m)), rng.uniform(-5, 5))
    z = sinkhorn(c)
    assert max(_marginals(z)) < 1e-5
    assert np.abs(sinkhorn(c + 3.7) - z).max() < 1e-6


def test_sinkhorn_rejects_bad_input():
    with pytest.raises(RegadError):
        sinkhorn(np.zeros((1, 3)))
    with pytest.raises(RegadError):
        sinkhorn(np.array([[0.0, np.nan], [0, 0]]))


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    sizes = [(3, 5), (6, 2), (4, 4)]
    scores = np.zeros((3, 6, 5))
    for b, (n, m) in enumerate(sizes):
        scores[b, :n, :m] = rng.uniform(-1, 1, (n, m))
    z = sinkhorn_batch(scores, [s[0] for s in sizes], [s[1] for s in sizes], 0.5, iters=100)
    for b, (n, m) in enumerate(sizes):
        ref = sinkhorn(augment_dustbin(scores[b, :n, :m], 0.5), iters=100, anderson=0)
        assert np.allclose(z[b, :n, :m], ref[:n, :m], atol=1e-8)
        assert np.allclose(z[b, -1, :m], ref[-1, :m], atol=1e-8)


def test_cost_matrix_and_dustbin():
    fi = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert cost_matrix(fi, fi).tolist() == [[0.5, 0.0], [0.0, 2.0]]
    a = augment_dustbin(np.zeros((2, 3)), 7.0)
    assert a.shape == (3, 4) and a[-1].tolist() == [7.0] * 4 and a[:, -1].tolist() == [7.0] * 3


def test_gaussian_and_dual_normalisation():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(6, 4))
    h = gaussian_correlation(f, f)
    assert np.allclose(h, h.T) and np.allclose(np.diag(h), 1.0)
    hb = dual_normalize(h)
    assert np.all(hb > 0) and np.all(hb <= 1)


def test_topk_patch_matches_oracle():
    rng = np.random.default_rng(2)
    h = rng.integers(0, 5, (6, 7)).astype(float)
    got = topk_patch_matches(h, 10)
    flat = [(-h[i, j], i, j) for i in range(6) for j in range(7)]
    ref = sorted(flat)[:10]
    assert got.pairs.tolist() == [[i, j] for _, i, j in ref]
    assert got.overlaps.tolist() == [-v for v, _, _ in ref]
    assert len(topk_patch_matches(h, 1000)) == 42


def test_mutual_topk_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        z = rng.integers(0, 4, (5, 6)).astype(float)
        k = int(rng.integers(1, 4))
        got = {tuple(p) for p in mutual_topk_point_matches(z, k, has_dustbin=False)}

        def top(vals):
            return set(sorted(range(len(vals)), key=lambda i: (-vals[i], i))[:k])

        ref = {(a, b) for a in range(5) for b in range(6) if b in top(z[a]) and a in top(z[:, b])}
        assert got == ref


def test_mutual_top1_permutation():
    z = np.zeros((4, 4))
    z[[0, 1, 2], [2, 0, 1]] = 1.0
    pairs = mutual_topk_point_matches(z, 1)
    assert pairs.tolist() == [[0, 2], [1, 0], [2, 1]]
