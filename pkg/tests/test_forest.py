import numpy as np
import pytest

from tsci.errors import SizeError
from tsci.forest import (Forest, ForestParams, RegressionTree, WeightMatrix, fit_forest,
                         forest_weights, full_sample_weights)

from conftest import toy_data


def stump(feature, threshold):
    return RegressionTree(
        feature=np.array([feature, -1, -1]), threshold=np.array([threshold, 0.0, 0.0]),
        left=np.array([1, -1, -1]), right=np.array([2, -1, -1]), boot=np.arange(0),
    )


def leaf():
    return RegressionTree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.arange(0))


def test_single_leaf_tree_gives_uniform_weights():
    forest = Forest((leaf(),), ForestParams(num_trees=1))
    om = forest_weights(forest, np.arange(4.0).reshape(4, 1))
    np.testing.assert_allclose(om.omega, np.full((4, 4), 0.25))


def test_one_partition_leaf_averaging():
    forest = Forest((stump(0, 1.5),), ForestParams(num_trees=1))
    om = forest_weights(forest, np.array([[0.0], [1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(om.omega[0], [0.5, 0.5, 0, 0])
    np.testing.assert_allclose(om.omega[1], [0.5, 0.5, 0, 0])


def test_two_tree_average():
    # partitions {1,2}|{3} and {1}|{2,3} over rows at 1, 2, 3
    forest = Forest((stump(0, 2.5), stump(0, 1.5)), ForestParams(num_trees=2))
    om = forest_weights(forest, np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(om.omega[1], [0.25, 0.5, 0.25])


def test_empty_leaf_fallback_counted():
    forest = Forest((stump(0, 1.5),), ForestParams(num_trees=1))
    om = forest_weights(forest, np.array([[0.0], [1.0]]), c_query=np.array([[5.0]]))
    np.testing.assert_allclose(om.omega, [[0.5, 0.5]])
    assert om.empty_leaf_events == 1


def test_constant_treatment_gives_root_leaves():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(40, 3))
    forest = fit_forest(c, np.ones(40), ForestParams(num_trees=5))
    assert all(t.n_nodes == 1 for t in forest.trees)


def test_min_leaf_equal_to_sample_gives_single_leaf():
    y, d, z, x = toy_data(30, 1)
    forest = fit_forest(np.column_stack([z, x]), d, ForestParams(num_trees=4, min_leaf=30))
    assert all(t.n_leaves == 1 for t in forest.trees)


def test_fewer_rows_than_min_leaf():
    with pytest.raises(SizeError):
        fit_forest(np.zeros((3, 1)), np.arange(3.0), ForestParams(min_leaf=5))


def test_step_function_root_split_matches_brute_force():
    z = np.array([-1.5, -1.0, -0.4, -0.1, 0.2, 0.7, 1.1, 1.9])
    d = np.where(z > 0, 3.0, -1.0)
    params = ForestParams(num_trees=1, mtry=1, min_leaf=1, replace=False, sample_fraction=1.0)
    tree = fit_forest(z.reshape(-1, 1), d, params).trees[0]
    # brute force: best SSE reduction over midpoints of sorted distinct values
    zs = np.sort(z)
    best = None
    for a, b in zip(zs[:-1], zs[1:]):
        t = (a + b) / 2
        left, right = d[z <= t], d[z > t]
        sse = ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()
        if best is None or sse < best[0]:
            best = (sse, t)
    assert tree.feature[0] == 0
    assert tree.threshold[0] == pytest.approx(best[1])


def test_leaves_respect_min_leaf_on_bootstrap():
    y, d, z, x = toy_data(200, 3)
    c = np.column_stack([z, x])
    forest = fit_forest(c, d, ForestParams(num_trees=5, min_leaf=7))
    for t in forest.trees:
        counts = np.bincount(t.leaf_assign(c[t.boot]), minlength=t.n_nodes)
        assert counts[t.feature < 0].min() >= 7


@pytest.mark.parametrize("seed", range(5))
def test_weights_row_stochastic_and_contractive(seed):
    y, d, z, x = toy_data(150, seed)
    c = np.column_stack([z, x])
    forest = fit_forest(c[100:], d[100:], ForestParams(num_trees=30, min_leaf=3, seed=seed))
    om = forest_weights(forest, c[:100]).omega
    assert om.min() >= 0
    np.testing.assert_allclose(om.sum(axis=1), 1.0, atol=1e-12)
    assert np.linalg.norm(om, 2) <= 1 + 1e-12


def test_weights_independent_of_a1_treatment():
    y, d, z, x = toy_data(120, 9)
    c = np.column_stack([z, x])
    forest = fit_forest(c[80:], d[80:], ForestParams(num_trees=10))
    om1 = forest_weights(forest, c[:80]).omega
    d2 = d.copy()
    d2[:80] += 100.0
    forest2 = fit_forest(c[80:], d2[80:], ForestParams(num_trees=10))
    assert np.array_equal(om1, forest_weights(forest2, c[:80]).omega)


def test_singleton_leaves_give_identity():
    c = np.arange(6.0).reshape(-1, 1)
    params = ForestParams(num_trees=3, min_leaf=1, replace=False, mtry=1)
    forest = fit_forest(c, np.arange(6.0) ** 2, params)
    om = forest_weights(forest, c)
    np.testing.assert_allclose(om.omega, np.eye(6))
    np.testing.assert_allclose(om.predict(np.arange(6.0)), np.arange(6.0))


def test_forest_deterministic():
    y, d, z, x = toy_data(90, 2)
    c = np.column_stack([z, x])
    a = forest_weights(fit_forest(c, d, ForestParams(num_trees=8, seed=5)), c).omega
    b = forest_weights(fit_forest(c, d, ForestParams(num_trees=8, seed=5)), c).omega
    assert np.array_equal(a, b)


def test_full_sample_weights():
    y, d, z, x = toy_data(30, 4)
    c = np.column_stack([z, x])
    om = full_sample_weights(c, d, ForestParams(num_trees=10))
    assert om.kind == "full-sample-forest"
    np.testing.assert_allclose(om.omega.sum(axis=1), 1.0, atol=1e-12)
    again = full_sample_weights(c, d, ForestParams(num_trees=10))
    assert np.array_equal(om.omega, again.omega)
    flat = full_sample_weights(c, np.ones(30), ForestParams(num_trees=3))
    np.testing.assert_allclose(flat.omega, 1 / 30)


def test_weight_matrix_kind_checked():
    with pytest.raises(ValueError):
        WeightMatrix(np.eye(2), "kernel")


def test_gram_matches_direct_product():
    om = WeightMatrix(np.array([[0.5, 0.5, 0], [0.2, 0.3, 0.5], [0, 0, 1.0]]), "boosting")
    np.testing.assert_allclose(om.gram, om.omega.T @ om.omega)
