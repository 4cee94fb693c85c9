import itertools

import numpy as np
import pytest

from regad.descriptor import describe
from regad.exceptions import RegadError
from regad.geometry import PointCloud, build_multiscale, random_rigid
from regad.memorybank import (
    MemoryBank,
    NormalizationParams,
    bank_from_aligned,
    build_bank,
    coreset_greedy,
    fuse,
    nn_distance,
    norm_params,
)
from regad.synth import make_normal


def test_norm_params_examples():
    p = norm_params(np.array([[0.0, 2.0]]), np.array([[1.0, 0, 0], [0, 0.6, 0.8]]))
    assert p.gamma_f == 2.0 and np.isclose(p.gamma_c, 1.0)
    assert norm_params(np.zeros((3, 2)), np.ones((3, 3))).gamma_f == 1.0
    with pytest.raises(RegadError):
        NormalizationParams(0.0, 1.0)


def test_fuse():
    f, c = np.arange(6.0).reshape(2, 3), np.ones((2, 3))
    assert np.array_equal(fuse(f, c, NormalizationParams(1.0, 1.0)), np.hstack([f, c]))
    out = fuse(np.zeros((2, 3)), c, NormalizationParams(5.0, 2.0))
    assert np.all(out[:, :3] == 0) and np.all(out[:, 3:] == 0.5)


def test_coreset_rate_one_and_square():
    rows = np.random.default_rng(0).normal(size=(7, 3))
    assert sorted(coreset_greedy(rows, 1.0).tolist()) == list(range(7))
    sq = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])
    for seed in range(8):
        a, b = coreset_greedy(sq, 0.5, seed)
        assert np.isclose(np.linalg.norm(sq[a] - sq[b]), np.sqrt(2))


def test_coreset_two_approximation():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(3, 11))
        x = rng.normal(size=(n, 2))
        d = np.linalg.norm(x[:, None] - x[None], axis=-1)
        m = int(rng.integers(1, n))
        rate = m / n
        chosen = coreset_greedy(x, rate, int(rng.integers(100)))
        greedy_r = d[:, chosen].min(axis=1).max()
        opt = min(d[:, list(s)].min(axis=1).max() for s in itertools.combinations(range(n), len(chosen)))
        assert greedy_r <= 2 * opt + 1e-12


def test_nn_distance_examples():
    bank = MemoryBank(np.zeros((1, 4)), NormalizationParams(1.0, 1.0))
    assert nn_distance(bank, [0, 0, 3, 0]) == 3.0
    rng = np.random.default_rng(2)
    e = rng.normal(size=(50, 5))
    bank = MemoryBank(e, NormalizationParams(1.0, 1.0))
    assert nn_distance(bank, e[7]) == 0.0
    q = rng.normal(size=(20, 5))
    ref = np.linalg.norm(q[:, None] - e[None], axis=-1).min(axis=1)
    assert np.allclose(bank.distances(q), ref, atol=1e-12)
    with pytest.raises(RegadError):
        bank.distances(np.zeros((1, 3)))


def test_bank_from_aligned_single_and_duplicates(tmp_path):
    rng = np.random.default_rng(3)
    coords, feats = rng.normal(size=(30, 3)), rng.random((30, 6))
    bank = bank_from_aligned([(coords, feats)], rate=1.0)
    params = norm_params(feats, coords)
    assert sorted(map(tuple, bank.entries)) == sorted(map(tuple, fuse(feats, coords, params)))
    dup = bank_from_aligned([(coords, feats), (coords, feats)], rate=0.5)
    assert dup.source_count == 60
    assert np.all(dup.distances(fuse(feats, coords, dup.params)) == 0)
    bank.save(tmp_path / "b.bin")
    back = MemoryBank.load(tmp_path / "b.bin")
    assert np.allclose(back.entries, bank.entries, atol=1e-6)


def test_rotated_copies_align():
    cloud = make_normal("sphere-bumps", 4000, 4)
    ms0 = build_multiscale(cloud, 2048, 8.0)
    feats = [describe(ms0)]
    for s in range(3):
        t = random_rigid(20 + s, np.pi, 0.3)
        feats.append(describe(build_multiscale(PointCloud(t.apply(cloud.points)), 2048, 8.0)))
    from regad.memorybank import align_to_template

    transforms = align_to_template(feats, 0)
    # fine points of the template mapped by T_gt land on the rotated fine points
    for s, (f, t) in enumerate(zip(feats[1:], transforms[1:])):
        t_gt = random_rigid(20 + s, np.pi, 0.3)
        moved = t.apply(t_gt.apply(cloud.points))
        assert np.linalg.norm(moved - cloud.points, axis=1).max() < 2 * ms0.voxel_size
    bank = build_bank(feats, rate=0.1)
    assert bank.fused_dim == 36 and len(bank) == int(np.ceil(0.1 * bank.source_count))
