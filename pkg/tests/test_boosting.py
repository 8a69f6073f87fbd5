from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import best_split
from piperisk.boosting import (
    BoostedEnsemble,
    GbtParams,
    Tree,
    fit_gbt,
    leaf_weight,
    predict_proba_gbt,
    split_gain,
)
from piperisk.errors import ConfigError, NonFiniteError, SchemaError, SingleClassError


def make_data(n=600, p=5, seed=0, rounding=None):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    if rounding is not None:
        x = np.round(x, rounding)
    eta = 1.5 * x[:, 0] - x[:, 1] * (x[:, 2] > 0) - 1.0
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(np.int8)
    return x, y


def ensemble(trees, base=0.0, eta=1.0, n_features=1):
    return BoostedEnsemble(trees, eta, base, GbtParams(), [f"x{j}" for j in range(n_features)])


def test_hand_cases():
    assert leaf_weight(-2.0, 4.0, 1.0) == pytest.approx(0.4, abs=1e-12)
    assert split_gain(-2.0, 2.0, 2.0, 2.0, 1.0, 0.0) == pytest.approx(4 / 3, abs=1e-12)


def test_prediction_composition():
    x = np.array([[0.7], [0.2]])
    assert np.all(predict_proba_gbt(ensemble([], base=0.4), x) == pytest.approx(1 / (1 + np.exp(-0.4))))
    one = ensemble([Tree.leaf(0.5)], base=0.1, eta=0.3)
    assert predict_proba_gbt(one, x)[0] == pytest.approx(1 / (1 + np.exp(-(0.1 + 0.15))), abs=1e-15)
    stump = Tree(
        np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]), np.array([2, -1, -1]),
        np.array([0.0, -1.0, 1.0]), np.array([2.0, 1.0, 1.0]),
    )
    p = predict_proba_gbt(ensemble([stump]), x)
    assert p[0] == pytest.approx(0.7310585786300049, abs=1e-12)
    assert p[1] == pytest.approx(1 - 0.7310585786300049, abs=1e-12)
    with pytest.raises(SchemaError):
        predict_proba_gbt(ensemble([stump]), np.zeros((1, 2)))


def test_separable_data_reaches_pure_probabilities():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1000, 3))
    y = (x[:, 0] > 0).astype(np.int8)
    model = fit_gbt(x, y, GbtParams(n_trees=50, learning_rate=0.3))
    p = predict_proba_gbt(model, x)
    assert np.all(p[y == 1] > 0.99) and np.all(p[y == 0] < 0.01)


def test_single_class_and_bad_inputs():
    x = np.zeros((5, 2))
    with pytest.raises(SingleClassError):
        fit_gbt(x, np.ones(5))
    bad = np.ones((5, 2))
    bad[0, 0] = np.inf
    with pytest.raises(NonFiniteError):
        fit_gbt(bad, [0, 1, 0, 1, 0])
    with pytest.raises(ConfigError):
        GbtParams(max_depth=0)
    with pytest.raises(ConfigError):
        GbtParams(learning_rate=1.5)


def test_base_score_is_label_log_odds():
    x, y = make_data()
    model = fit_gbt(x, y, GbtParams(n_trees=1))
    assert model.base_score == pytest.approx(np.log(y.mean() / (1 - y.mean())), abs=1e-15)


def test_margin_matches_training_loss_record():
    x, y = make_data()
    model = fit_gbt(x, y, GbtParams(n_trees=20, learning_rate=0.3))
    m = model.margin(x)
    assert model.train_loss[-1] == pytest.approx(np.mean(np.logaddexp(0, m) - y * m), abs=1e-12)


@given(seed=st.integers(0, 10_000), depth=st.integers(1, 5), eta=st.sampled_from([0.05, 0.1, 0.3]),
       rounding=st.sampled_from([None, 0, 1]))
def test_training_loss_non_increasing(seed, depth, eta, rounding):
    x, y = make_data(300, seed=seed, rounding=rounding)
    model = fit_gbt(x, y, GbtParams(n_trees=15, max_depth=depth, learning_rate=eta))
    assert np.all(np.diff(model.train_loss) <= 1e-12)


def _node_rows(tree, x):
    rows = {0: np.arange(len(x))}
    stack = [0]
    while stack:
        nd = stack.pop()
        if tree.is_leaf(nd):
            continue
        idx = rows[nd]
        left = x[idx, tree.feature[nd]] <= tree.threshold[nd]
        rows[int(tree.left[nd])] = idx[left]
        rows[int(tree.right[nd])] = idx[~left]
        stack += [int(tree.left[nd]), int(tree.right[nd])]
    return rows


@given(seed=st.integers(0, 10_000), rounding=st.sampled_from([None, 1]), mcw=st.sampled_from([0.0, 1.0, 5.0]),
       gamma=st.sampled_from([0.0, 0.5]))
def test_split_consistency(seed, rounding, mcw, gamma):
    x, y = make_data(200, p=4, seed=seed, rounding=rounding)
    params = GbtParams(n_trees=4, max_depth=3, learning_rate=0.3, min_child_weight=mcw, gamma=gamma)
    model = fit_gbt(x, y, params)
    margin = np.full(len(y), model.base_score)
    for tree in model.trees:
        p = 0.5 * (1 + np.tanh(0.5 * margin))
        g, h = p - y, p * (1 - p)
        for nd, idx in _node_rows(tree, x).items():
            depth = 0
            parent = {int(c): i for i in range(tree.n_nodes) for c in (tree.left[i], tree.right[i]) if c >= 0}
            cur = nd
            while cur in parent:
                cur = parent[cur]
                depth += 1
            if depth == params.max_depth:
                assert tree.is_leaf(nd)
                continue
            gain, f, t = best_split(x[idx], g[idx], h[idx], params.lambda_leaf, params.gamma, params.min_child_weight)
            if tree.is_leaf(nd):
                assert f == -1 or gain < 1e-12
                assert tree.value[nd] == pytest.approx(leaf_weight(g[idx].sum(), h[idx].sum(), params.lambda_leaf), abs=1e-10)
            else:
                assert (tree.feature[nd], tree.threshold[nd]) == (f, t)
        margin = margin + model.learning_rate * tree.predict(x)


def test_deterministic_across_threads():
    x, y = make_data(2000, p=8)
    params = GbtParams(n_trees=10, max_depth=4, learning_rate=0.3)
    serial = [fit_gbt(x, y, params).to_json() for _ in range(2)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = list(pool.map(lambda _: fit_gbt(x, y, params).to_json(), range(4)))
    assert len(set(serial + parallel)) == 1


def test_json_round_trip():
    x, y = make_data()
    model = fit_gbt(x, y, GbtParams(n_trees=5))
    again = BoostedEnsemble.from_dict(model.to_dict())
    np.testing.assert_array_equal(again.margin(x), model.margin(x))


def test_cover_mask_counts_real_rows_only():
    x, y = make_data(400)
    mask = np.arange(400) < 300
    model = fit_gbt(x, y, GbtParams(n_trees=3), cover_mask=mask)
    for tree in model.trees:
        assert tree.cover[0] == 300
        for nd in range(tree.n_nodes):
            if not tree.is_leaf(nd):
                assert tree.cover[nd] == tree.cover[tree.left[nd]] + tree.cover[tree.right[nd]]
