import numpy as np
import pytest
from scipy.special import expit
from sklearn.exceptions import NotFittedError

from cfcv.exceptions import ConvergenceError
from cfcv.propensity import ConstantPropensity, LogisticPropensity


def test_intercept_only_recovers_coin_bias():
    rng = np.random.default_rng(0)
    t = (rng.random(10_000) < 0.3).astype(np.int64)
    X = np.zeros((10_000, 1))
    model = LogisticPropensity(l2_penalty=1e-6).fit(X, t)
    e = model.predict_propensity(X)
    assert np.all(e == e[0])
    assert abs(e[0] - t.mean()) < 0.02


def test_separable_data_beats_grid_oracle():
    """Penalty keeps the optimum finite; Newton must match a 1-d search."""
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    t = np.array([0, 0, 1, 1])
    model = LogisticPropensity(l2_penalty=1.0).fit(X, t)
    assert np.all(np.isfinite(model.coef_))

    def objective(beta, b0):
        z = X.ravel() * beta + b0
        nll = np.sum(np.logaddexp(0.0, z) - t * z)
        return nll + 0.5 * 1.0 * beta**2

    best = min(
        objective(b, b0)
        for b in np.linspace(-5, 5, 401)
        for b0 in np.linspace(-2, 2, 81)
    )
    fitted = objective(model.coef_[0], model.intercept_)
    assert fitted <= best + 1e-6


def test_recovers_true_propensity_in_bulk():
    rng = np.random.default_rng(1)
    n = 100_000
    X = rng.normal(size=(n, 3))
    beta = np.array([0.8, -0.5, 0.3])
    e_true = expit(X @ beta)
    t = (rng.random(n) < e_true).astype(np.int64)
    model = LogisticPropensity(l2_penalty=1.0).fit(X, t)
    e_hat = model.predict_propensity(X)
    assert np.mean(np.abs(e_hat - e_true)) < 0.02


def test_zero_coefficients_predict_half():
    model = LogisticPropensity()
    model.coef_ = np.zeros(2)
    model.intercept_ = 0.0
    model.n_features_in_ = 2
    assert np.all(model.predict_propensity(np.ones((3, 2))) == 0.5)


def test_clipping_is_exact_at_the_edge():
    model = LogisticPropensity(clip_eps=0.01)
    model.coef_ = np.array([100.0])
    model.intercept_ = 0.0
    model.n_features_in_ = 1
    e = model.predict_propensity(np.array([[1.0], [-1.0]]))
    assert e[0] == 0.99 and e[1] == 0.01


def test_known_logit_maps_to_expected_probability():
    model = LogisticPropensity()
    model.coef_ = np.array([np.log(3.0)])
    model.intercept_ = 0.0
    model.n_features_in_ = 1
    e = model.predict_propensity(np.array([[1.0]]))
    assert abs(e[0] - 0.75) < 1e-12


def test_not_fitted_and_shape_errors():
    with pytest.raises(NotFittedError):
        LogisticPropensity().predict_propensity(np.ones((2, 2)))
    model = LogisticPropensity().fit(np.ones((4, 2)), np.array([0, 1, 0, 1]))
    with pytest.raises(ValueError):
        model.predict_propensity(np.ones((2, 3)))


def test_fit_rejects_bad_labels():
    X = np.ones((3, 1))
    with pytest.raises(ValueError):
        LogisticPropensity().fit(X, np.array([0, 1, 2]))
    with pytest.raises(ValueError):
        LogisticPropensity().fit(X, np.array([0.0, 0.5, 1.0]))


def test_single_arm_raises():
    X = np.random.default_rng(2).normal(size=(5, 2))
    with pytest.raises(ValueError):
        LogisticPropensity().fit(X, np.ones(5, dtype=np.int64))


def test_nonconvergence_reports_residual():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 4))
    t = (rng.random(200) < expit(X[:, 0])).astype(np.int64)
    with pytest.raises(ConvergenceError) as err:
        LogisticPropensity(max_iter=1, tol=0.0).fit(X, t)
    assert err.value.residual > 0.0
    assert err.value.n_iter == 1


def test_fit_is_deterministic():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 3))
    t = (rng.random(300) < expit(X[:, 0] - X[:, 1])).astype(np.int64)
    a = LogisticPropensity().fit(X, t)
    b = LogisticPropensity().fit(X, t)
    assert np.array_equal(a.coef_, b.coef_)
    assert a.intercept_ == b.intercept_


def test_validation_of_settings():
    X = np.ones((4, 1))
    t = np.array([0, 1, 0, 1])
    with pytest.raises(ValueError):
        LogisticPropensity(l2_penalty=-0.1).fit(X, t)
    with pytest.raises(ValueError):
        LogisticPropensity(clip_eps=0.6).fit(X, t)
    with pytest.raises(ValueError):
        LogisticPropensity(max_iter=0).fit(X, t)


def test_constant_propensity():
    model = ConstantPropensity(value=0.3).fit(np.ones((2, 1)), np.array([0, 1]))
    assert np.all(model.predict_propensity(np.ones((5, 1))) == 0.3)
    with pytest.raises(ValueError):
        ConstantPropensity(value=1.0).fit(np.ones((2, 1)), np.array([0, 1]))
