import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aesthetic3d import explain, forest
from aesthetic3d.forest import Dataset
from oracles import interventional_oracle, path_oracle


def make_data(n, p, fn, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, p))
    return Dataset(X, fn(X) + noise * rng.standard_normal(n), None, None)


def small_forest(seed=0, n=120, p=4, depth=3, trees=6):
    d = make_data(n, p, lambda X: X[:, 0] * X[:, 1] + np.sin(2 * X[:, 2]) - X[:, 3] ** 2, seed=seed, noise=0.05)
    return forest.train_forest(d, {"n_trees": trees, "max_depth": depth}, seed=seed), d


# --- attributions -----------------------------------------------------------------------

def test_single_leaf_forest():
    d = make_data(30, 3, lambda X: X[:, 0], seed=1)
    model = forest.train_forest(d, {"n_trees": 3, "max_depth": 0}, seed=0)
    ex = explain.tree_shap(model, d.X[0])
    assert np.all(ex.values == 0)
    assert ex.base == pytest.approx(ex.prediction, abs=1e-12)


def test_stump_two_coalitions():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (50, 3))
    d = Dataset(X, (X[:, 1] > 0.2).astype(float) * 3, None, None)
    tree = forest.train_tree(d, {"max_depth": 1, "max_features": 3})
    model = forest.ForestModel([tree], forest._hp({"n_trees": 1, "max_depth": 1}), 0,
                               tuple(f"{i:06d}" for i in range(50)), np.zeros((1, 50), bool), ("a", "b", "c"), 3)
    assert tree.feature[0] == 1
    x = np.array([0.0, 0.9, 0.0])
    ex = explain.tree_shap(model, x)
    # two coalitions for the split feature: absent gives the cover mean, present gives the leaf
    l, r = tree.left[0], tree.right[0]
    mean = (tree.cover[l] * tree.value[l] + tree.cover[r] * tree.value[r]) / tree.cover[0]
    assert ex.values[1] == tree.value[r] - mean
    assert ex.values[0] == 0 and ex.values[2] == 0


@pytest.mark.parametrize("seed", range(4))
def test_path_matches_exhaustive(seed):
    model, d = small_forest(seed)
    phi, base = explain.shap_values(model, d.X[:5])
    for i in range(5):
        np.testing.assert_allclose(phi[i], path_oracle(model, d.X[i]), atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_interventional_matches_exhaustive(seed):
    model, d = small_forest(seed, n=60)
    phi, base = explain.shap_values(model, d.X[:4], "interventional", background=d.X)
    assert base == pytest.approx(forest.predict_batch(model, d.X).mean(), abs=1e-12)
    for i in range(4):
        np.testing.assert_allclose(phi[i], interventional_oracle(model, d.X[i], d.X), atol=1e-6)


def test_deep_trees_path_oracle():
    # unlimited depth exercises the unwinding with repeated features along a path
    model, d = small_forest(5, n=80, depth=None, trees=3)
    phi, _ = explain.shap_values(model, d.X[:3])
    for i in range(3):
        np.testing.assert_allclose(phi[i], path_oracle(model, d.X[i]), atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), method=st.sampled_from(["path", "interventional"]))
def test_local_accuracy(seed, method):
    model, d = small_forest(seed % 50, depth=None, trees=10)
    X = np.random.default_rng(seed).uniform(-1.2, 1.2, (20, 4))
    phi, base = explain.shap_values(model, X, method, background=d.X[:30])
    np.testing.assert_allclose(base + phi.sum(axis=1), forest.predict_batch(model, X), atol=1e-6)


def test_dummy_feature_zero():
    d = make_data(200, 5, lambda X: X[:, 0] + X[:, 1], seed=2)
    d.X[:, 4] = 0.5  # constant, so never split on
    model = forest.train_forest(d, {"n_trees": 20}, seed=0)
    phi, _ = explain.shap_values(model, d.X[:50])
    assert np.all(phi[:, 4] == 0)
    assert explain.global_importance(model, d.X)[model.feature_names[4]] == 0


def test_errors():
    model, d = small_forest()
    with pytest.raises(ValueError):
        explain.shap_values(model, d.X[:, :3])
    with pytest.raises(ValueError):
        explain.shap_values(model, d.X, "interventional")
    with pytest.raises(ValueError):
        explain.shap_values(model, d.X, "kernel")
    with pytest.raises(ValueError):
        explain.global_importance(model, np.zeros((0, 4)))


# --- global importance -------------------------------------------------------------------

def test_planted_driver_ranked_first():
    for seed in range(5):
        d = make_data(300, 6, lambda X: 5 * X[:, 2], seed=seed, noise=0.5)
        model = forest.train_forest(d, {"n_trees": 50}, seed=seed)
        imp = explain.global_importance(model, d.X)
        assert max(imp, key=imp.get) == model.feature_names[2]


def test_importance_row_order_invariant():
    model, d = small_forest(1)
    perm = np.random.default_rng(0).permutation(len(d))
    a = explain.global_importance(model, d.X)
    b = explain.global_importance(model, d.X[perm])
    for k in a:
        assert b[k] == pytest.approx(a[k], rel=1e-12)
    assert all(v >= 0 for v in a.values())


def test_duplicate_column_splits_importance():
    ratios = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-1, 1, (300, 4))
        y = 2 * X[:, 0] + X[:, 1] + 0.1 * rng.standard_normal(300)
        base = forest.train_forest(Dataset(X, y, None, None), {"n_trees": 40}, seed=seed)
        X2 = np.column_stack([X, X[:, 0]])
        dup = forest.train_forest(Dataset(X2, y, None, None), {"n_trees": 40}, seed=seed)
        i1 = explain.global_importance(base, X)
        i2 = explain.global_importance(dup, X2)
        ratios.append((i2["f0"] + i2["f4"]) / i1["f0"])
        assert i2["f4"] > 0.1 * i2["f0"]
    assert np.mean(ratios) == pytest.approx(1.0, rel=0.2)


def test_importance_rows_sorted():
    assert explain.importance_rows({"a": 0.1, "b": 0.3, "c": 0.1}) == [("b", 0.3), ("a", 0.1), ("c", 0.1)]


# --- partial dependence --------------------------------------------------------------------

def test_pdp_naive_double_loop():
    model, d = small_forest(2, n=200)
    curve = explain.partial_dependence(model, d.X, 1, grid_size=20)
    grid = np.unique(np.quantile(d.X[:, 1], np.linspace(0, 1, 20)))
    np.testing.assert_array_equal(curve.grid, grid)
    naive = []
    for v in grid:
        total = []
        for row in d.X:
            x = row.copy()
            x[1] = v
            total.append(forest.predict(model, x))
        naive.append(math.fsum(total) / len(total))
    np.testing.assert_array_equal(curve.response, naive)


def test_pdp_flat_for_unused_feature():
    d = make_data(150, 3, lambda X: X[:, 0], seed=3)
    d.X[:, 2] = np.round(d.X[:, 2], 1)
    model = forest.train_forest(d, {"n_trees": 20}, seed=0)
    unused = set(range(3)) - set().union(*(t.used_features() for t in model.trees))
    for j in unused:
        c = explain.partial_dependence(model, d.X, j)
        assert np.ptp(c.response) < 1e-9


def test_pdp_flat_when_not_split():
    d = make_data(150, 3, lambda X: X[:, 0], seed=3)
    d.X[:, 2] = 0.0
    model = forest.train_forest(d, {"n_trees": 10}, seed=0)
    probe = d.X.copy()
    probe[:, 2] = np.linspace(-1, 1, 150)
    c = explain.partial_dependence(model, probe, 2)
    assert np.ptp(c.response) < 1e-9


def test_pdp_step():
    d = make_data(400, 3, lambda X: (X[:, 0] > 0.3).astype(float), seed=4)
    model = forest.train_forest(d, {"n_trees": 50}, seed=0)
    c = explain.partial_dependence(model, d.X, 0, grid_size=40)
    jumps = np.diff(c.response)
    k = np.argmax(jumps)
    assert c.grid[k] <= 0.3 + 0.1 and c.grid[k + 1] >= 0.3 - 0.1
    assert jumps[k] > 0.5
    assert np.abs(np.delete(jumps, k)).max() < 0.25


def test_pdp_exact_for_additive_forest():
    # each tree sees one varying feature, so the forest is additive by construction
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (300, 3))
    trees = []
    for j in range(3):
        Xj = np.zeros_like(X)
        Xj[:, j] = X[:, j]
        trees.append(forest.train_tree(Dataset(Xj, np.cos(3 * X[:, j]) * (j + 1), None, None),
                                       {"max_depth": 4, "max_features": 3}))
    model = forest.ForestModel(trees, forest._hp({"n_trees": 3}), 0, tuple(f"{i:06d}" for i in range(300)),
                               np.zeros((3, 300), bool), ("a", "b", "c"), 3)
    for j in range(3):
        c = explain.partial_dependence(model, X, j)
        probe = np.zeros((len(c.grid), 3))
        probe[:, j] = c.grid
        own = forest.tree_predict(trees[j], probe) / 3
        np.testing.assert_allclose(c.response - c.response.mean(), own - own.mean(), atol=1e-12)


def test_pdp_additive_recovery():
    # forests shrink toward the mean near the edge of the support, so the tails are trimmed
    comps = [lambda v: np.sin(2 * v), lambda v: v ** 2, lambda v: 0.5 * v]
    d = make_data(5000, 3, lambda X: sum(c(X[:, j]) for j, c in enumerate(comps)), seed=6)
    model = forest.train_forest(d, {"n_trees": 100, "min_samples_leaf": 3, "max_features": 3}, seed=0)
    for j, comp in enumerate(comps):
        c = explain.partial_dependence(model, d.X, j)
        inner = (c.grid > -0.9) & (c.grid < 0.9)
        truth = comp(c.grid[inner])
        dev = (c.response[inner] - c.response[inner].mean()) - (truth - truth.mean())
        assert np.abs(dev).max() < 0.05 * np.ptp(comp(np.linspace(-1, 1, 101)))


def test_pdp_grid_rules():
    assert len(explain.pdp_grid(np.arange(100.0))) == 20
    # quantiles at 0, .25, .5, .75, 1 of (0, 0, 0, 1) interpolate to 0, 0, 0, .25, 1
    assert list(explain.pdp_grid(np.array([0, 0, 0, 1.0]), 5)) == [0.0, 0.25, 1.0]
    with pytest.raises(ValueError):
        explain.pdp_grid(np.ones(10))
    with pytest.raises(ValueError):
        explain.pdp_grid(np.arange(10.0), 1)
    with pytest.raises(ValueError):
        explain.PdpCurve("a", np.array([1.0, 1.0]), np.zeros(2))


def test_pdp_rows():
    c = explain.PdpCurve("a", np.array([0.0, 1.0]), np.array([2.0, 3.0]))
    assert list(explain.pdp_rows([c])) == [("a", 0.0, 2.0), ("a", 1.0, 3.0)]


# --- pearson --------------------------------------------------------------------------------

def test_pearson_identity_and_missing():
    rng = np.random.default_rng(0)
    X = rng.random((30, 3))
    X[:, 2] = 1.0
    r = explain.pearson_feature_scan(X, X[:, 0], ["a", "b", "c"])
    assert r["a"] == pytest.approx(1.0, abs=1e-15)
    assert r["c"] is None
    assert r["b"] == pytest.approx(np.corrcoef(X[:, 1], X[:, 0])[0, 1], abs=1e-12)
    with pytest.raises(ValueError):
        explain.pearson_feature_scan(X[:1], X[:1, 0])


def test_linear_scan_misses_interaction():
    d = make_data(2000, 4, lambda X: X[:, 1] * X[:, 2], seed=7)
    r = explain.pearson_feature_scan(d.X, d.y)
    assert abs(r["f1"]) <= 0.1 and abs(r["f2"]) <= 0.1
    perm = np.random.default_rng(0).permutation(2000)
    tr, te = d.subset(perm[:1500]), d.subset(perm[1500:])
    model = forest.train_forest(tr, {"n_trees": 100, "min_samples_leaf": 3}, seed=0)
    assert forest.r2(te.y, forest.predict_batch(model, te.X)) >= 0.6


def test_pearson_null_coverage():
    n = 100
    inside = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        r = explain.pearson_feature_scan(rng.standard_normal((n, 1)), rng.standard_normal(n))["f0"]
        inside += abs(r) <= 2 / math.sqrt(n)
    # 2/sqrt(n) is about the 95.4% point of the null; binomial slack for 200 draws
    assert inside >= 0.95 * 200 - 2 * math.sqrt(200 * 0.05 * 0.95)
