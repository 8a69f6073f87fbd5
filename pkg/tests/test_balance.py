import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from piperisk.balance import (
    SmoteConfig,
    interpolate,
    nearest_minority_neighbors,
    positive_rate,
    smote,
)
from piperisk.errors import ConfigError, EmptyInputError, SingleClassError


def imbalanced(n_neg, n_pos, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(size=(n_neg, dim)), rng.normal(2.0, 1.0, size=(n_pos, dim))])
    y = np.concatenate([np.zeros(n_neg, dtype=np.int8), np.ones(n_pos, dtype=np.int8)])
    perm = rng.permutation(len(y))
    return x[perm], y[perm]


def test_interpolation_endpoints_and_midpoint():
    a, b = np.array([0.0, 0.0]), np.array([2.0, 4.0])
    np.testing.assert_array_equal(interpolate(a, b, 0.0), a)
    np.testing.assert_array_equal(interpolate(a, b, 1.0), b)
    np.testing.assert_array_equal(interpolate(a, b, 0.5), [1.0, 2.0])


def test_positive_rate():
    assert positive_rate([0, 0, 0, 1]) == 0.25
    assert positive_rate([0, 0]) == 0.0
    with pytest.raises(EmptyInputError):
        positive_rate([])


def test_balanced_after_smote():
    x, y = imbalanced(990, 10)
    res = smote(x, y)
    assert positive_rate(res.labels) == 0.5
    assert res.n_synthetic == 980


def test_neighbors_exact_and_tie_break():
    pts = np.array([[0.0], [1.0], [3.0], [-1.0]])
    nn = nearest_minority_neighbors(pts, 2)
    # from 0: distances 1 (idx 1) and 1 (idx 3), tie resolves to the lower index
    assert nn[0].tolist() == [1, 3]
    assert nn[2].tolist() == [1, 0]


def test_small_minority_clamps_k():
    x, y = imbalanced(30, 3)
    with pytest.warns(RuntimeWarning, match="clamped"):
        res = smote(x, y, SmoteConfig(k_neighbors=5))
    assert res.k_used == 2 and res.warning


def test_errors():
    with pytest.raises(SingleClassError):
        smote(np.zeros((4, 2)), np.zeros(4))
    with pytest.raises(SingleClassError):
        smote(np.zeros((4, 2)), np.array([0, 0, 0, 1]))
    with pytest.raises(ConfigError):
        SmoteConfig(k_neighbors=0)
    with pytest.raises(ConfigError):
        SmoteConfig(target_ratio=1.5)


def test_target_ratio_below_one():
    x, y = imbalanced(400, 20)
    res = smote(x, y, SmoteConfig(target_ratio=0.5))
    assert np.count_nonzero(res.labels == 1) == 200


@given(
    n_neg=st.integers(10, 120),
    n_pos=st.integers(2, 9),
    k=st.integers(1, 6),
    seed=st.integers(0, 2**31),
)
def test_smote_properties(n_neg, n_pos, k, seed):
    x, y = imbalanced(n_neg, n_pos, seed=seed % 1000)
    x_before, y_before = x.copy(), y.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = smote(x, y, SmoteConfig(k_neighbors=k, seed=seed))
        again = smote(x, y, SmoteConfig(k_neighbors=k, seed=seed))
    # counts balanced within one sample
    assert abs(np.count_nonzero(res.labels == 1) - np.count_nonzero(res.labels == 0)) <= 1
    # originals untouched and kept in place
    np.testing.assert_array_equal(x, x_before)
    np.testing.assert_array_equal(y, y_before)
    n = len(y)
    np.testing.assert_array_equal(res.matrix[:n], x)
    np.testing.assert_array_equal(res.labels[:n], y)
    # each synthetic row is a convex combination of a minority pair
    syn = res.matrix[n:]
    assert np.all(y[res.anchors] == 1) and np.all(y[res.neighbors] == 1)
    assert np.all((res.steps >= 0) & (res.steps <= 1))
    rebuilt = x[res.anchors] + res.steps[:, None] * (x[res.neighbors] - x[res.anchors])
    assert np.abs(rebuilt - syn).max(initial=0.0) <= 1e-12
    # determinism
    np.testing.assert_array_equal(res.matrix, again.matrix)
    np.testing.assert_array_equal(res.labels, again.labels)
