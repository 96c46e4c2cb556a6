"""Meta-learners that turn outcome regressors into treatment-effect predictors.

Five strategies are provided; each accepts any regressor following the
fit/predict contract (optionally weighted) and is itself a scikit-learn style
estimator: construct with sub-estimators, ``fit(X, t, y)``, then ``predict``
returns per-unit effect estimates.  Sub-estimators are cloned before fitting,
so prototypes can be reused across candidates.

``build_candidate_set`` crosses meta-learner strategies with base-learner
prototypes into the fitted candidate list that the validation metrics rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.exceptions import NotFittedError

from .base_learners import (
    GradientBoostedRegressor,
    RegressionTree,
    RidgeRegressor,
)
from .metrics import dr_tau
from ._validation import check_binary, check_both_arms, check_matrix, check_vector

__all__ = [
    "SLearner",
    "TLearner",
    "XLearner",
    "DRLearner",
    "DomainAdaptationLearner",
    "Candidate",
    "META_LEARNERS",
    "default_base_learners",
    "build_candidate_set",
]


def _check_fit_inputs(X, t, y):
    X = check_matrix(X)
    n = X.shape[0]
    t = check_binary(t, n=n)
    y = check_vector(y, n=n)
    check_both_arms(t)
    return X, t, y


def _require_propensity(est):
    if est.propensity_model is None:
        raise ValueError(
            f"{type(est).__name__} requires a propensity_model with predict_propensity"
        )
    return est.propensity_model


def _check_predict_input(est, X):
    if not hasattr(est, "n_features_in_"):
        raise NotFittedError(
            f"{type(est).__name__} is not fitted yet; call fit before predict"
        )
    X = check_matrix(X)
    if X.shape[1] != est.n_features_in_:
        raise ValueError(
            f"X has {X.shape[1]} features, expected {est.n_features_in_}"
        )
    return X


class SLearner(BaseEstimator):
    """Single regressor on features plus the treatment indicator.

    The effect estimate is the model's prediction gap between t = 1 and
    t = 0 at the same features.
    """

    def __init__(self, base_estimator=None):
        self.base_estimator = base_estimator

    def fit(self, X, t, y):
        X, t, y = _check_fit_inputs(X, t, y)
        base = self.base_estimator if self.base_estimator is not None else RidgeRegressor()
        model = clone(base)
        model.fit(np.hstack([X, t[:, None].astype(np.float64)]), y)
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = _check_predict_input(self, X)
        ones = np.ones((X.shape[0], 1))
        zeros = np.zeros((X.shape[0], 1))
        return self.model_.predict(np.hstack([X, ones])) - self.model_.predict(
            np.hstack([X, zeros])
        )


class TLearner(BaseEstimator):
    """Independent per-arm regressions; effect = f1(x) - f0(x)."""

    def __init__(self, base_estimator=None):
        self.base_estimator = base_estimator

    def fit(self, X, t, y):
        X, t, y = _check_fit_inputs(X, t, y)
        base = self.base_estimator if self.base_estimator is not None else RidgeRegressor()
        self.model0_ = clone(base).fit(X[t == 0], y[t == 0])
        self.model1_ = clone(base).fit(X[t == 1], y[t == 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = _check_predict_input(self, X)
        return self.model1_.predict(X) - self.model0_.predict(X)


class XLearner(BaseEstimator):
    """Cross-arm imputation with a propensity-weighted blend.

    Stage one fits per-arm outcome models.  Stage two regresses the imputed
    effects y - f0(x) (treated) and f1(x) - y (controls) on x within each
    arm.  Predictions blend the two with weights e(x) on the control-side
    model and 1 - e(x) on the treated-side model.
    """

    def __init__(self, base_estimator=None, propensity_model=None):
        self.base_estimator = base_estimator
        self.propensity_model = propensity_model

    def fit(self, X, t, y):
        X, t, y = _check_fit_inputs(X, t, y)
        _require_propensity(self)
        base = self.base_estimator if self.base_estimator is not None else RidgeRegressor()
        X1, y1 = X[t == 1], y[t == 1]
        X0, y0 = X[t == 0], y[t == 0]
        f0 = clone(base).fit(X0, y0)
        f1 = clone(base).fit(X1, y1)
        d1 = y1 - f0.predict(X1)
        d0 = f1.predict(X0) - y0
        self.effect_model1_ = clone(base).fit(X1, d1)
        self.effect_model0_ = clone(base).fit(X0, d0)
        self.outcome_model0_ = f0
        self.outcome_model1_ = f1
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = _check_predict_input(self, X)
        e = self.propensity_model.predict_propensity(X)
        tau1 = self.effect_model1_.predict(X)
        tau0 = self.effect_model0_.predict(X)
        return e * tau0 + (1.0 - e) * tau1


class DRLearner(BaseEstimator):
    """Regression on doubly robust pseudo-outcomes.

    Stage one fits per-arm outcome models and reads off propensities; stage
    two regresses the doubly robust effect estimate for each unit on x.
    """

    def __init__(self, base_estimator=None, propensity_model=None):
        self.base_estimator = base_estimator
        self.propensity_model = propensity_model

    def fit(self, X, t, y):
        X, t, y = _check_fit_inputs(X, t, y)
        prop = _require_propensity(self)
        base = self.base_estimator if self.base_estimator is not None else RidgeRegressor()
        f0 = clone(base).fit(X[t == 0], y[t == 0])
        f1 = clone(base).fit(X[t == 1], y[t == 1])
        e = prop.predict_propensity(X)
        pseudo = dr_tau(t, y, e, f0.predict(X), f1.predict(X))
        self.effect_model_ = clone(base).fit(X, pseudo)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = _check_predict_input(self, X)
        return self.effect_model_.predict(X)


class DomainAdaptationLearner(BaseEstimator):
    """Importance-weighted per-arm models plus an effect regression.

    The treated-arm outcome model is trained with weights (1 - e) / e and
    the control-arm model with e / (1 - e), tilting each arm toward the
    other's covariate distribution.  An overall model then regresses the
    imputed effects from both arms on x.  The three sub-models are
    independently configurable, which makes this the natural target for
    per-component hyperparameter tuning.
    """

    def __init__(
        self,
        treated_model=None,
        controls_model=None,
        overall_model=None,
        propensity_model=None,
    ):
        self.treated_model = treated_model
        self.controls_model = controls_model
        self.overall_model = overall_model
        self.propensity_model = propensity_model

    def fit(self, X, t, y):
        X, t, y = _check_fit_inputs(X, t, y)
        prop = _require_propensity(self)
        treated = self.treated_model if self.treated_model is not None else RidgeRegressor()
        controls = self.controls_model if self.controls_model is not None else RidgeRegressor()
        overall = self.overall_model if self.overall_model is not None else RidgeRegressor()
        e = prop.predict_propensity(X)
        mask1 = t == 1
        mask0 = ~mask1
        w1 = (1.0 - e[mask1]) / e[mask1]
        w0 = e[mask0] / (1.0 - e[mask0])
        f1 = clone(treated).fit(X[mask1], y[mask1], sample_weight=w1)
        f0 = clone(controls).fit(X[mask0], y[mask0], sample_weight=w0)
        d1 = y[mask1] - f0.predict(X[mask1])
        d0 = f1.predict(X[mask0]) - y[mask0]
        X_all = np.vstack([X[mask1], X[mask0]])
        d_all = np.concatenate([d1, d0])
        self.overall_model_ = clone(overall).fit(X_all, d_all)
        self.treated_model_ = f1
        self.controls_model_ = f0
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = _check_predict_input(self, X)
        return self.overall_model_.predict(X)


META_LEARNERS = {
    "s": SLearner,
    "t": TLearner,
    "x": XLearner,
    "dr": DRLearner,
    "da": DomainAdaptationLearner,
}


def default_base_learners():
    """Prototype regressors spanning linear, tree, and boosted families."""
    return {
        "ridge": RidgeRegressor(l2_penalty=1.0),
        "tree": RegressionTree(max_depth=3, min_samples_leaf=5),
        "tree_deep": RegressionTree(max_depth=8, min_samples_leaf=2),
        "gbr": GradientBoostedRegressor(
            n_estimators=100, max_depth=3, min_samples_leaf=5, learning_rate=0.1
        ),
        "gbr_shallow": GradientBoostedRegressor(
            n_estimators=50, max_depth=1, min_samples_leaf=5, learning_rate=0.1
        ),
    }


@dataclass(frozen=True)
class Candidate:
    """A fitted effect predictor under a stable identifier."""

    identifier: str
    model: object

    def predict(self, X) -> np.ndarray:
        return self.model.predict(X)


def _make_meta(meta_name, base, propensity_model):
    cls = META_LEARNERS[meta_name]
    if meta_name in ("s", "t"):
        return cls(base_estimator=base)
    if meta_name in ("x", "dr"):
        return cls(base_estimator=base, propensity_model=propensity_model)
    return cls(
        treated_model=base,
        controls_model=base,
        overall_model=base,
        propensity_model=propensity_model,
    )


def build_candidate_set(
    data,
    propensity_model,
    meta_names=None,
    base_learners=None,
) -> list[Candidate]:
    """Fit every (meta-learner, base-learner) pair on ``data``.

    Candidates are ordered meta-outer, base-inner, with identifiers like
    ``"dr-gbr"``; the ordering and identifiers are deterministic so scores
    and ranks can be aligned across pipeline stages.
    """
    meta_names = tuple(meta_names) if meta_names is not None else tuple(META_LEARNERS)
    for name in meta_names:
        if name not in META_LEARNERS:
            raise ValueError(f"unknown meta-learner {name!r}; options: {tuple(META_LEARNERS)}")
    bases = base_learners if base_learners is not None else default_base_learners()
    candidates = []
    for meta_name in meta_names:
        for base_name, base in bases.items():
            est = _make_meta(meta_name, base, propensity_model)
            est.fit(data.features, data.treatments, data.outcomes)
            candidates.append(Candidate(identifier=f"{meta_name}-{base_name}", model=est))
    return candidates
