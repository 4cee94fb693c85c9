import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regad.evaluation import auroc, o_auroc, p_auroc, roc_curve
from regad.exceptions import DegenerateLabelsError


def test_auroc_hand_case():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auroc_perfect_and_inverted():
    assert auroc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert auroc([4, 3, 2, 1], [0, 0, 1, 1]) == 0.0
    assert auroc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(4, 60))
def test_auroc_properties(seed, n):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 10, n).astype(float)
    y = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    a = auroc(s, y)
    pos, neg = s[y == 1], s[y == 0]
    ref = ((pos[:, None] > neg[None]).sum() + 0.5 * (pos[:, None] == neg[None]).sum()) / (len(pos) * len(neg))
    assert np.isclose(a, ref)
    assert np.isclose(auroc(-s, y), 1 - a)
    assert np.isclose(auroc(np.exp(s / 3), y), a)


def test_degenerate_labels():
    with pytest.raises(DegenerateLabelsError, match="degenerate labels"):
        auroc([1, 2], [1, 1])
    with pytest.raises(DegenerateLabelsError):
        o_auroc([(0.3, 0), (0.2, 0)])


def test_o_and_p_auroc():
    assert o_auroc([(0.1, 0), (0.9, 1), (0.5, 0)]) == 1.0
    res = [(np.array([0.1, 0.9]), np.array([0, 1])), (np.array([0.2, 0.3]), np.array([0, 0]))]
    assert p_auroc(res) == 1.0


def test_roc_curve():
    curve = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert curve[0].tolist() == [0.0, 0.0] and curve[-1].tolist() == [1.0, 1.0]
    assert np.all(np.diff(curve, axis=0) >= 0)
    assert np.isclose(np.trapezoid(curve[:, 1], curve[:, 0]), 0.75)
    tied = roc_curve([1, 1, 2], [0, 1, 1])
    assert len(tied) == 3
