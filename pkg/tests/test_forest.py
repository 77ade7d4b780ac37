import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmcausal.core import DataError, SchemaError
from pmcausal.forest import ForestConfig, ForestModel, TreeModel, fit_forest, predict_forest


def small_config(**kw):
    base = dict(n_trees=25, min_leaf=1, seed=42)
    base.update(kw)
    return ForestConfig(**base)


class TestRegression:
    def test_separable_binary_feature_reproduced(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        y = np.array([1.0, 1.0, 5.0, 5.0])
        model = fit_forest(X, y, small_config(bootstrap=False), task="regression")
        np.testing.assert_allclose(predict_forest(model, X), y)

    def test_constant_response(self):
        X = np.arange(8, dtype=float).reshape(-1, 1)
        model = fit_forest(X, np.full(8, 7.0), small_config(), task="regression")
        assert predict_forest(model, [[3.0]]) == pytest.approx(7.0)

    def test_same_seed_bit_identical(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        cfg = small_config(n_trees=10, min_leaf=2)
        p1 = predict_forest(fit_forest(X, y, cfg), X)
        p2 = predict_forest(fit_forest(X, y, cfg), X)
        np.testing.assert_array_equal(p1, p2)

    def test_prediction_within_training_range(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(60, 2))
        y = rng.normal(size=60)
        model = fit_forest(X, y, small_config(n_trees=15, min_leaf=3))
        preds = predict_forest(model, rng.normal(size=(30, 2)) * 4)
        assert np.all(preds >= y.min() - 1e-12)
        assert np.all(preds <= y.max() + 1e-12)

    def test_row_shuffle_invariance(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(50, 3))
        y = rng.normal(size=50)
        grid = rng.normal(size=(20, 3))
        cfg = small_config(n_trees=12, min_leaf=2)
        base = predict_forest(fit_forest(X, y, cfg), grid)
        perm = rng.permutation(50)
        shuffled = predict_forest(fit_forest(X[perm], y[perm], cfg), grid)
        np.testing.assert_array_equal(base, shuffled)

    def test_all_features_constant_flagged(self):
        X = np.ones((10, 2))
        y = np.arange(10, dtype=float)
        model = fit_forest(X, y, small_config())
        assert "constant_features" in model.flags
        assert predict_forest(model, [[1.0, 1.0]]) == pytest.approx(np.mean(y), abs=1.0)


class TestClassification:
    def test_pure_leaf_probability_one(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        y = np.array([0, 0, 1, 1])
        model = fit_forest(X, y, small_config(bootstrap=False), task="classification")
        probs = predict_forest(model, X)
        np.testing.assert_allclose(probs[:2, 0], 1.0)
        np.testing.assert_allclose(probs[2:, 1], 1.0)

    def test_two_tree_average_of_leaf_proportions(self):
        t1 = TreeModel(
            feature=np.array([-1]),
            threshold=np.array([np.nan]),
            left=np.array([-1]),
            right=np.array([-1]),
            leaf_value=np.array([[1.0, 4.0]]),  # proportions (0.2, 0.8)
        )
        t2 = TreeModel(
            feature=np.array([-1]),
            threshold=np.array([np.nan]),
            left=np.array([-1]),
            right=np.array([-1]),
            leaf_value=np.array([[2.0, 3.0]]),  # proportions (0.4, 0.6)
        )
        model = ForestModel(trees=(t1, t2), task="classification", n_features=1, classes=(0, 1))
        np.testing.assert_allclose(predict_forest(model, [[0.0]]), [[0.3, 0.7]])

    def test_single_tree_leaf_mean(self):
        t = TreeModel(
            feature=np.array([-1]),
            threshold=np.array([np.nan]),
            left=np.array([-1]),
            right=np.array([-1]),
            leaf_value=np.array([3.5]),
        )
        model = ForestModel(trees=(t,), task="regression", n_features=2)
        assert predict_forest(model, [[0.0, 9.0]]) == pytest.approx(3.5)

    def test_leaf_counts_sum_to_leaf_size(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(30, 2))
        y = rng.integers(0, 3, size=30)
        model = fit_forest(X, y, small_config(n_trees=5, min_leaf=2), task="classification")
        for tree in model.trees:
            leaves = tree.left < 0
            totals = tree.leaf_value[leaves].sum(axis=1)
            assert np.all(totals >= model.config.min_leaf)

    def test_multiclass_probabilities(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(45, 2))
        y = rng.integers(0, 3, size=45)
        model = fit_forest(X, y, small_config(n_trees=8, min_leaf=3), task="classification")
        probs = predict_forest(model, X)
        assert probs.shape == (45, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            fit_forest(np.ones((4, 1)), np.zeros(4, dtype=int), small_config(), task="classification")


class TestValidation:
    def test_width_mismatch(self):
        X = np.random.default_rng(0).normal(size=(10, 2))
        model = fit_forest(X, X[:, 0], small_config(n_trees=2))
        with pytest.raises(SchemaError):
            predict_forest(model, [[1.0]])

    def test_bad_config(self):
        with pytest.raises(DataError):
            ForestConfig(n_trees=0)
        with pytest.raises(DataError):
            ForestConfig(min_leaf=0)

    def test_mtry_capped_at_feature_count(self):
        X = np.random.default_rng(0).normal(size=(10, 2))
        model = fit_forest(X, X[:, 0], small_config(mtry=5, n_trees=3))
        assert model.n_features == 2


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_simplex_for_any_seed(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(24, 2))
    y = rng.integers(0, 2, size=24)
    if len(np.unique(y)) < 2:
        y[0] = 1 - y[0]
    model = fit_forest(X, y, ForestConfig(n_trees=4, min_leaf=2, seed=seed), task="classification")
    probs = predict_forest(model, X)
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
