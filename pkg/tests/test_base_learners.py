import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cfcv.base_learners import (
    GbrSearchSpace,
    GradientBoostedRegressor,
    RegressionTree,
    RidgeRegressor,
)
from cfcv.exceptions import ConvergenceError


def _duplicate_rows(X, y, w):
    """Expand integer weights into literal row copies."""
    reps = w.astype(int)
    return np.repeat(X, reps, axis=0), np.repeat(y, reps)


# -- ridge ------------------------------------------------------------------

def test_ridge_exact_line():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = 2.0 * X.ravel()
    model = RidgeRegressor(l2_penalty=0.0).fit(X, y)
    assert abs(model.coef_[0] - 2.0) < 1e-10
    assert abs(model.intercept_) < 1e-10


def test_ridge_infinite_penalty_limit():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    w = rng.uniform(0.5, 2.0, size=30)
    model = RidgeRegressor(l2_penalty=1e12).fit(X, y, sample_weight=w)
    target = np.average(y, weights=w)
    assert np.max(np.abs(model.predict(X) - target)) < 1e-6


def test_ridge_matches_closed_form_oracle():
    """Five points, penalty 0.1, weighted: verify against a dense solve."""
    rng = np.random.default_rng(3)
    X = rng.normal(size=(5, 2))
    y = rng.normal(size=5)
    w = rng.uniform(0.5, 2.0, size=5)
    lam = 0.1

    A = np.hstack([X, np.ones((5, 1))])
    penalty = lam * np.eye(3)
    penalty[2, 2] = 0.0  # intercept stays unpenalized
    beta = np.linalg.solve(A.T @ (A * w[:, None]) + penalty, A.T @ (w * y))

    model = RidgeRegressor(l2_penalty=lam).fit(X, y, sample_weight=w)
    assert np.allclose(model.coef_, beta[:2], atol=1e-10)
    assert abs(model.intercept_ - beta[2]) < 1e-10


def test_ridge_no_intercept():
    X = np.array([[1.0], [2.0]])
    y = np.array([3.0, 6.0])
    model = RidgeRegressor(l2_penalty=0.0, fit_intercept=False).fit(X, y)
    assert abs(model.coef_[0] - 3.0) < 1e-10
    assert model.intercept_ == 0.0


def test_ridge_singular_raises():
    X = np.zeros((4, 2))
    with pytest.raises(ConvergenceError):
        RidgeRegressor(l2_penalty=0.0).fit(X, np.ones(4))


def test_ridge_invalid_penalty():
    with pytest.raises(ValueError):
        RidgeRegressor(l2_penalty=-1.0).fit(np.ones((2, 1)), np.ones(2))


def test_ridge_weight_equals_duplication():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)
    w = rng.integers(1, 4, size=12).astype(np.float64)
    weighted = RidgeRegressor(l2_penalty=0.5).fit(X, y, sample_weight=w)
    Xd, yd = _duplicate_rows(X, y, w)
    duplicated = RidgeRegressor(l2_penalty=0.5).fit(Xd, yd)
    assert np.allclose(weighted.coef_, duplicated.coef_, atol=1e-10)


# -- tree -------------------------------------------------------------------

def test_tree_constant_target_is_single_leaf():
    X = np.random.default_rng(0).normal(size=(10, 2))
    y = np.full(10, 3.5)
    model = RegressionTree(max_depth=4).fit(X, y)
    assert len(model.value_) == 1
    assert np.all(model.predict(X) == 3.5)


def test_tree_depth_one_exact_group_means():
    X = np.array([[0.0], [1.0], [10.0], [11.0]])
    y = np.array([1.0, 2.0, 9.0, 10.0])
    model = RegressionTree(max_depth=1).fit(X, y)
    pred = model.predict(X)
    assert pred.tolist() == [1.5, 1.5, 9.5, 9.5]


def test_tree_min_leaf_forces_stump():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 2))
    y = rng.normal(size=20)
    w = rng.uniform(0.5, 1.5, size=20)
    model = RegressionTree(max_depth=5, min_samples_leaf=float(w.sum())).fit(
        X, y, sample_weight=w
    )
    assert len(model.value_) == 1
    assert np.allclose(model.predict(X), np.average(y, weights=w))


def test_tree_split_matches_exhaustive_enumeration():
    """Depth-1 fit agrees with brute force over every (feature, threshold)."""
    rng = np.random.default_rng(4)
    for trial in range(20):
        X = rng.normal(size=(9, 3))
        y = rng.normal(size=9)
        w = rng.uniform(0.5, 2.0, size=9)

        best = (np.inf, None, None)
        for j in range(3):
            for thr in np.unique(X[:, j])[:-1]:
                left = X[:, j] <= thr
                # same floor the tree enforces: each side needs weight >= 1.0
                if w[left].sum() < 1.0 or w[~left].sum() < 1.0:
                    continue
                sse = 0.0
                for mask in (left, ~left):
                    mean = np.average(y[mask], weights=w[mask])
                    sse += np.sum(w[mask] * (y[mask] - mean) ** 2)
                if sse < best[0] - 1e-12:
                    best = (sse, j, thr)

        model = RegressionTree(max_depth=1).fit(X, y, sample_weight=w)
        feat, thr = model.feature_[0], model.threshold_[0]
        left = X[:, feat] <= thr
        sse = sum(
            np.sum(w[m] * (y[m] - np.average(y[m], weights=w[m])) ** 2)
            for m in (left, ~left)
        )
        assert sse <= best[0] + 1e-9


def test_tree_weight_equals_duplication():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(15, 2))
    y = rng.normal(size=15)
    w = rng.integers(1, 4, size=15).astype(np.float64)
    weighted = RegressionTree(max_depth=3, min_samples_leaf=2.0).fit(
        X, y, sample_weight=w
    )
    Xd, yd = _duplicate_rows(X, y, w)
    duplicated = RegressionTree(max_depth=3, min_samples_leaf=2.0).fit(Xd, yd)
    grid = rng.normal(size=(50, 2))
    assert np.allclose(weighted.predict(grid), duplicated.predict(grid), atol=1e-8)


def test_tree_zero_weight_rows_are_ignored():
    X = np.array([[0.0], [1.0], [100.0]])
    y = np.array([1.0, 1.0, 500.0])
    w = np.array([1.0, 1.0, 0.0])
    model = RegressionTree(max_depth=2).fit(X, y, sample_weight=w)
    assert np.all(model.predict(X) == 1.0)


def test_tree_validation():
    X, y = np.ones((3, 1)), np.ones(3)
    with pytest.raises(ValueError):
        RegressionTree(max_depth=0).fit(X, y)
    with pytest.raises(ValueError):
        RegressionTree(min_samples_leaf=0.0).fit(X, y)
    with pytest.raises(NotFittedError):
        RegressionTree().predict(X)


# -- gradient boosting ------------------------------------------------------

def test_gbr_single_stage_reduction():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30)
    gbr = GradientBoostedRegressor(
        n_estimators=1, max_depth=6, learning_rate=1.0, subsample=1.0
    ).fit(X, y)
    tree = RegressionTree(max_depth=6).fit(X, y - y.mean())
    assert np.allclose(gbr.predict(X), y.mean() + tree.predict(X), atol=1e-10)


def test_gbr_training_error_is_monotone():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(60, 3))
    y = rng.normal(size=60)
    gbr = GradientBoostedRegressor(n_estimators=40, max_depth=2,
                                   learning_rate=0.3, subsample=1.0).fit(X, y)
    scores = np.array(gbr.train_score_)
    assert np.all(np.diff(scores) <= 1e-12)


def test_gbr_zero_learning_rate_is_constant():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(20, 2))
    y = rng.normal(size=20)
    w = rng.uniform(0.5, 2.0, size=20)
    gbr = GradientBoostedRegressor(n_estimators=5, learning_rate=0.0).fit(
        X, y, sample_weight=w
    )
    assert np.allclose(gbr.predict(X), np.average(y, weights=w))


def test_gbr_weight_equals_duplication():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(14, 2))
    y = rng.normal(size=14)
    w = rng.integers(1, 4, size=14).astype(np.float64)
    weighted = GradientBoostedRegressor(
        n_estimators=10, max_depth=2, min_samples_leaf=2.0,
        learning_rate=0.5, subsample=1.0,
    ).fit(X, y, sample_weight=w)
    Xd, yd = _duplicate_rows(X, y, w)
    duplicated = GradientBoostedRegressor(
        n_estimators=10, max_depth=2, min_samples_leaf=2.0,
        learning_rate=0.5, subsample=1.0,
    ).fit(Xd, yd)
    grid = rng.normal(size=(40, 2))
    assert np.allclose(weighted.predict(grid), duplicated.predict(grid), atol=1e-8)


def test_gbr_subsample_determinism():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(50, 2))
    y = rng.normal(size=50)
    a = GradientBoostedRegressor(n_estimators=8, subsample=0.5, seed=3).fit(X, y)
    b = GradientBoostedRegressor(n_estimators=8, subsample=0.5, seed=3).fit(X, y)
    assert np.array_equal(a.predict(X), b.predict(X))


def test_gbr_validation():
    X, y = np.ones((3, 1)), np.ones(3)
    with pytest.raises(ValueError):
        GradientBoostedRegressor(learning_rate=1.5).fit(X, y)
    with pytest.raises(ValueError):
        GradientBoostedRegressor(subsample=0.0).fit(X, y)
    with pytest.raises(ValueError):
        GradientBoostedRegressor(n_estimators=0).fit(X, y)


def test_estimators_are_cloneable():
    for proto in (RidgeRegressor(l2_penalty=0.3),
                  RegressionTree(max_depth=2, min_samples_leaf=3.0),
                  GradientBoostedRegressor(n_estimators=2, seed=4)):
        copy = clone(proto)
        assert copy.get_params() == proto.get_params()


# -- search space -----------------------------------------------------------

def test_gbr_space_samples_within_bounds():
    space = GbrSearchSpace(n_estimators=10, max_depth_range=(2, 5),
                           min_samples_leaf_range=(1, 3),
                           learning_rate_range=(1e-3, 1e-1),
                           subsample_choices=(0.5, 1.0))
    rng = np.random.default_rng(0)
    for _ in range(50):
        model = space.sample(rng, seed=7)
        assert 2 <= model.max_depth <= 5
        assert 1 <= model.min_samples_leaf <= 3
        assert 1e-3 <= model.learning_rate <= 1e-1
        assert model.subsample in (0.5, 1.0)
        assert model.n_estimators == 10 and model.seed == 7


def test_gbr_space_collapsed_point_is_exact():
    space = GbrSearchSpace(max_depth_range=(3, 3), min_samples_leaf_range=(2, 2),
                           learning_rate_range=(0.05, 0.05), subsample_choices=(1.0,))
    model = space.sample(np.random.default_rng(0))
    assert model.max_depth == 3 and model.min_samples_leaf == 2
    assert model.learning_rate == 0.05 and model.subsample == 1.0


def test_gbr_space_validation():
    with pytest.raises(ValueError):
        GbrSearchSpace(n_estimators=0)
    with pytest.raises(ValueError):
        GbrSearchSpace(max_depth_range=(3, 2))
    with pytest.raises(ValueError):
        GbrSearchSpace(learning_rate_range=(0.0, 0.1))
    with pytest.raises(ValueError):
        GbrSearchSpace(subsample_choices=(0.0,))
