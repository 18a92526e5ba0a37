import numpy as np
import pytest

from rescast.errors import EmptyGrid, EmptyTraining, WidthMismatch
from oracles import greedy_tree, random_dataset
from rescast.trees import (
    ExtParams,
    Forest,
    GridResult,
    ext_fit,
    ext_predict,
    grid_search,
    splitmix64,
    tree_seed,
)


def single(tree, params, n_features, y):
    return Forest([tree], params, n_features, (float(y.min()), float(y.max())))


def test_exhaustive_mode_matches_greedy_oracle():
    rng = np.random.default_rng(2024)
    for i in range(20):
        X, y = random_dataset(rng, i)
        min_split = int(rng.integers(2, 6))
        max_depth = None if i % 2 else int(rng.integers(1, 5))
        params = ExtParams(n_estimators=1, exhaustive=True, min_samples_split=min_split, max_depth=max_depth)
        got = ext_fit(X, y, params).trees[0].to_nested()
        want = greedy_tree(X, y, list(range(len(y))), 0, min_split, max_depth)
        assert got == want, f"dataset {i}"


def test_splitmix64_reference_value():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert tree_seed(7, 0) != tree_seed(7, 1) != tree_seed(8, 1)


def test_constant_target_gives_single_leaves(rng):
    X = rng.normal(size=(30, 3))
    f = ext_fit(X, np.full(30, 2.5), ExtParams(n_estimators=5))
    assert all(t.n_nodes == 1 and t.value[0] == 2.5 for t in f.trees)


def test_depth_zero_stump_predicts_mean(rng):
    X, y = rng.normal(size=(25, 2)), rng.normal(size=25)
    f = ext_fit(X, y, ExtParams(n_estimators=1, max_depth=0))
    np.testing.assert_allclose(ext_predict(f, rng.normal(size=(7, 2))), y.mean(), rtol=1e-15)


def test_nonlinear_signal_benchmark():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, size=(400, 3))
    y = X[:, 0] ** 2 + rng.normal(0, 0.1, 400)
    f = ext_fit(X[:200], y[:200], ExtParams(n_estimators=100, seed=1))
    mse = np.mean((ext_predict(f, X[200:]) - y[200:]) ** 2)
    assert mse < 0.5 * y.var()


def test_predictions_within_training_range_and_envelope(rng):
    X, y = rng.normal(size=(80, 4)), rng.normal(size=80)
    p = ExtParams(n_estimators=20, seed=5)
    f = ext_fit(X, y, p)
    Xt = rng.normal(size=(50, 4)) * 3
    pred = ext_predict(f, Xt)
    per_tree = np.array([ext_predict(single(t, p, 4, y), Xt) for t in f.trees])
    assert np.all(pred >= per_tree.min(axis=0)) and np.all(pred <= per_tree.max(axis=0))
    assert np.all(pred >= y.min()) and np.all(pred <= y.max())
    for t in f.trees:
        leaves = t.value[t.feature < 0]
        assert np.all(leaves >= y.min()) and np.all(leaves <= y.max())


def test_identical_trees_average_to_either(rng):
    X, y = rng.normal(size=(40, 2)), rng.normal(size=40)
    p = ExtParams(n_estimators=1, seed=9)
    t = ext_fit(X, y, p).trees[0]
    Xt = rng.normal(size=(10, 2))
    np.testing.assert_array_equal(ext_predict(Forest([t, t], p, 2, (0, 0)), Xt),
                                  ext_predict(single(t, p, 2, y), Xt))


def test_training_paths_are_consistent(rng):
    X, y = rng.normal(size=(60, 3)), rng.normal(size=60)
    f = ext_fit(X, y, ExtParams(n_estimators=3, min_samples_split=2))
    for t in f.trees:
        # a fully grown tree on distinct targets reproduces the training set exactly
        np.testing.assert_array_equal(ext_predict(single(t, f.params, 3, y), X), y)
        assert t.count[0] == 60


def test_determinism_and_thread_parity(rng):
    X, y = rng.normal(size=(300, 8)), rng.normal(size=300)
    p = ExtParams(n_estimators=12, seed=123, max_depth=8)
    a, b = ext_fit(X, y, p), ext_fit(X, y, p)
    assert a.to_bytes() == b.to_bytes()
    assert ext_fit(X, y, p, n_jobs=3).to_bytes() == a.to_bytes()
    assert ext_fit(X, y, ExtParams(n_estimators=12, seed=124, max_depth=8)).to_bytes() != a.to_bytes()


def test_serialization_round_trip(rng):
    X, y = rng.normal(size=(100, 5)), rng.normal(size=100)
    f = ext_fit(X, y, ExtParams(n_estimators=4, seed=2, k_features=2))
    g = Forest.from_bytes(f.to_bytes())
    assert g.params == f.params and g.n_features == 5
    np.testing.assert_array_equal(ext_predict(g, X), ext_predict(f, X))


def test_depth_improves_training_fit():
    rng = np.random.default_rng(77)
    for _ in range(10):
        X, y = rng.normal(size=(60, 3)), rng.normal(size=60)
        deep = ext_fit(X, y, ExtParams(n_estimators=5, seed=1))
        shallow = ext_fit(X, y, ExtParams(n_estimators=5, seed=1, max_depth=1))
        assert np.mean((ext_predict(deep, X) - y) ** 2) <= np.mean((ext_predict(shallow, X) - y) ** 2)


def test_input_validation(rng):
    with pytest.raises(EmptyTraining):
        ext_fit(np.empty((0, 2)), np.empty(0))
    with pytest.raises(ValueError):
        ext_fit(np.array([[np.nan]]), np.array([1.0]))
    f = ext_fit(rng.normal(size=(10, 2)), rng.normal(size=10), ExtParams(n_estimators=1))
    with pytest.raises(WidthMismatch):
        ext_predict(f, np.zeros((3, 3)))
    for bad in (dict(n_estimators=0), dict(min_samples_split=1), dict(seed=-1), dict(k_features=0)):
        with pytest.raises(ValueError):
            ExtParams(**bad)


# -- grid search ----------------------------------------------------------------------


def noisy_nonlinear(seed=4, n=300):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(n, 4))
    return X, np.sin(2 * X[:, 0]) + X[:, 1] ** 2 + rng.normal(0, 0.3, n)


def test_grid_single_combination():
    X, y = noisy_nonlinear()
    g = grid_search({"n_estimators": [5]}, X, y)
    assert g.best.n_estimators == 5 and len(g.table) == 1
    n_fit = 240
    f = ext_fit(X[:n_fit], y[:n_fit], g.best)
    assert g.table[0]["val_mse"] == float(np.mean((ext_predict(f, X[n_fit:]) - y[n_fit:]) ** 2))


def test_grid_prefers_larger_ensemble():
    X, y = noisy_nonlinear()
    g = grid_search({"n_estimators": [1, 100]}, X, y, base=ExtParams(seed=3))
    assert g.best.n_estimators == 100


def test_grid_table_and_ties():
    X, y = noisy_nonlinear(n=120)
    g = grid_search({"n_estimators": [2, 3], "max_depth": [0, 0, 2]}, X, y)
    assert len(g.table) == 6
    assert min(r["val_mse"] for r in g.table) == min(
        r["val_mse"] for r in g.table if r["params"] == {k: getattr(g.best, k) for k in r["params"]})
    # depth-0 forests all predict the same mean; the earliest combination wins the tie
    g0 = grid_search({"max_depth": [0, 0], "n_estimators": [1, 2]}, X, y)
    assert (g0.best.max_depth, g0.best.n_estimators) == (0, 1)
    assert GridResult.from_json(g.to_json()).best == g.best


def test_empty_grid():
    X, y = noisy_nonlinear(n=50)
    with pytest.raises(EmptyGrid):
        grid_search({}, X, y)
    with pytest.raises(EmptyGrid):
        grid_search({"n_estimators": []}, X, y)
