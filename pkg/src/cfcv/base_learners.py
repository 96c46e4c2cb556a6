"""Weighted regression learners implemented from first principles.

All three estimators follow the scikit-learn fit/predict contract (including
``get_params``/``set_params`` via ``BaseEstimator``, so ``sklearn.base.clone``
works) and accept ``sample_weight`` with frequency semantics: an integer
weight k behaves exactly like k duplicated rows, up to float round-off.  That
property is what the importance-weighted meta-learners rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .exceptions import ConvergenceError
from ._validation import check_matrix, check_sample_weight, check_vector

__all__ = [
    "RidgeRegressor",
    "RegressionTree",
    "GradientBoostedRegressor",
    "GbrSearchSpace",
]


def _check_fitted(est, attr: str) -> None:
    if not hasattr(est, attr):
        raise NotFittedError(
            f"{type(est).__name__} is not fitted yet; call fit before predict"
        )


class RidgeRegressor(BaseEstimator, RegressorMixin):
    """Weighted ridge regression solved by its normal equations.

    The intercept is never penalized.  ``l2_penalty=0`` gives ordinary least
    squares; a singular normal matrix then raises ConvergenceError instead of
    returning garbage coefficients.

    Parameters
    ----------
    l2_penalty : float, default 1.0
        Coefficient of the squared-norm penalty on the slope vector.
    fit_intercept : bool, default True
    """

    def __init__(self, l2_penalty: float = 1.0, fit_intercept: bool = True):
        self.l2_penalty = l2_penalty
        self.fit_intercept = fit_intercept

    def fit(self, X, y, sample_weight=None):
        X = check_matrix(X)
        n, d = X.shape
        y = check_vector(y, n=n)
        w = check_sample_weight(sample_weight, n)
        if not np.isfinite(self.l2_penalty) or self.l2_penalty < 0:
            raise ValueError(f"l2_penalty must be finite and >= 0, got {self.l2_penalty!r}")

        if self.fit_intercept:
            A = np.hstack([X, np.ones((n, 1))])
        else:
            A = X
        G = A.T @ (A * w[:, None])
        G[np.arange(d), np.arange(d)] += self.l2_penalty
        b = A.T @ (w * y)
        try:
            beta = np.linalg.solve(G, b)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(
                f"normal equations are singular (l2_penalty={self.l2_penalty}); "
                "increase the penalty or drop collinear columns"
            ) from exc
        self.coef_ = beta[:d]
        self.intercept_ = float(beta[d]) if self.fit_intercept else 0.0
        self.n_features_in_ = d
        return self

    def predict(self, X):
        _check_fitted(self, "coef_")
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return X @ self.coef_ + self.intercept_


def _best_split(X, y, w, min_leaf_weight: float):
    """Scan every feature for the weighted-SSE-minimizing axis-aligned split.

    Returns ``(feature, threshold, left_mask)`` or ``None`` when no split
    leaves at least ``min_leaf_weight`` total weight on each side.  Rows with
    value <= threshold go left; the threshold is the largest left-side value,
    so training-time membership is reproduced exactly at predict time.

    The scan is vectorized across all features at once: one argsort, then
    cumulative-moment arrays give every candidate's SSE in closed form.
    """
    m, d = X.shape
    if m < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    ws = w[order]
    wy = ws * ys
    wyy = wy * ys
    cw = np.cumsum(ws, axis=0)
    cwy = np.cumsum(wy, axis=0)
    cwyy = np.cumsum(wyy, axis=0)

    # Candidate boundary after sorted position i: left = rows 0..i.
    wl = cw[:-1]
    wr = cw[-1] - wl
    syl = cwy[:-1]
    syr = cwy[-1] - syl
    sql = cwyy[:-1]
    sqr = cwyy[-1] - sql
    valid = (xs[1:] > xs[:-1]) & (wl >= min_leaf_weight) & (wr >= min_leaf_weight)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        sse = (sql - syl * syl / wl) + (sqr - syr * syr / wr)
    sse = np.where(valid, sse, np.inf)

    # Ties happen legitimately (the same row partition is often reachable
    # along several features) and a raw argmin would let last-ulp rounding
    # pick the winner, so the chosen split could depend on how sample weight
    # was encoded.  Treat everything within a relative hair of the minimum as
    # tied and resolve by the lowest (feature, threshold) pair instead.
    best = float(sse.min())
    slack = 1e-9 * max(1.0, abs(best))
    cand_pos, cand_feat = np.nonzero(sse <= best + slack)
    thresholds = xs[cand_pos, cand_feat]
    k = np.lexsort((thresholds, cand_feat))[0]
    feature = int(cand_feat[k])
    threshold = float(thresholds[k])
    left_mask = X[:, feature] <= threshold
    return feature, threshold, left_mask


class RegressionTree(BaseEstimator, RegressorMixin):
    """Greedy least-squares regression tree with weighted splits.

    The minimum-leaf constraint counts total sample weight rather than rows,
    which is what makes integer weights equivalent to row duplication.
    Prediction routes all rows level by level through flat node arrays, so
    there is no per-row Python loop.

    Parameters
    ----------
    max_depth : int, default 5
    min_samples_leaf : float, default 1.0
        Minimum total weight required in each leaf.
    """

    _ZERO_SSE = 1e-12

    def __init__(self, max_depth: int = 5, min_samples_leaf: float = 1.0):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y, sample_weight=None):
        X = check_matrix(X)
        n, d = X.shape
        y = check_vector(y, n=n)
        w = check_sample_weight(sample_weight, n)
        if not isinstance(self.max_depth, (int, np.integer)) or self.max_depth < 1:
            raise ValueError(f"max_depth must be an integer >= 1, got {self.max_depth!r}")
        if self.min_samples_leaf <= 0:
            raise ValueError(
                f"min_samples_leaf must be > 0, got {self.min_samples_leaf!r}"
            )

        keep = w > 0
        if not keep.all():
            X, y, w = X[keep], y[keep], w[keep]

        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            return len(feature) - 1

        stack = [(new_node(), np.arange(X.shape[0]), 0)]
        while stack:
            node, rows, depth = stack.pop()
            yw = w[rows]
            mean = float(np.average(y[rows], weights=yw))
            value[node] = mean
            sse = float(np.sum(yw * (y[rows] - mean) ** 2))
            if depth >= self.max_depth or sse <= self._ZERO_SSE:
                continue
            found = _best_split(X[rows], y[rows], yw, self.min_samples_leaf)
            if found is None:
                continue
            feat, thr, left_mask = found
            feature[node] = feat
            threshold[node] = thr
            left[node] = new_node()
            right[node] = new_node()
            stack.append((left[node], rows[left_mask], depth + 1))
            stack.append((right[node], rows[~left_mask], depth + 1))

        self.feature_ = np.asarray(feature, dtype=np.int64)
        self.threshold_ = np.asarray(threshold, dtype=np.float64)
        self.left_ = np.asarray(left, dtype=np.int64)
        self.right_ = np.asarray(right, dtype=np.int64)
        self.value_ = np.asarray(value, dtype=np.float64)
        self.n_features_in_ = d
        return self

    def predict(self, X):
        _check_fitted(self, "value_")
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        while True:
            feat = self.feature_[node]
            active = feat >= 0
            if not active.any():
                break
            x_val = X[rows, np.where(active, feat, 0)]
            go_left = x_val <= self.threshold_[node]
            nxt = np.where(go_left, self.left_[node], self.right_[node])
            node = np.where(active, nxt, node)
        return self.value_[node]


class GradientBoostedRegressor(BaseEstimator, RegressorMixin):
    """Stagewise least-squares boosting over regression trees.

    Each stage fits a tree to the current residuals and adds
    ``learning_rate`` times its prediction.  With ``subsample=1`` the training
    MSE is non-increasing stage over stage, because every leaf value is the
    weighted residual mean inside that leaf.  ``subsample < 1`` fits each tree
    on a row subset drawn without replacement from the stage RNG.

    Parameters
    ----------
    n_estimators : int, default 100
    max_depth : int, default 3
    min_samples_leaf : float, default 1.0
    learning_rate : float, default 0.1
        Shrinkage in [0, 1]; zero yields the constant initial predictor.
    subsample : float, default 1.0
        Fraction of rows used per stage, in (0, 1].
    seed : int, default 0
    """

    def __init__(
        self,
        n_estimators: int = 100,
        max_depth: int = 3,
        min_samples_leaf: float = 1.0,
        learning_rate: float = 0.1,
        subsample: float = 1.0,
        seed: int = 0,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.learning_rate = learning_rate
        self.subsample = subsample
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        X = check_matrix(X)
        n, d = X.shape
        y = check_vector(y, n=n)
        w = check_sample_weight(sample_weight, n)
        if not isinstance(self.n_estimators, (int, np.integer)) or self.n_estimators < 1:
            raise ValueError(
                f"n_estimators must be an integer >= 1, got {self.n_estimators!r}"
            )
        if not (0.0 <= self.learning_rate <= 1.0):
            raise ValueError(
                f"learning_rate must lie in [0, 1], got {self.learning_rate!r}"
            )
        if not (0.0 < self.subsample <= 1.0):
            raise ValueError(f"subsample must lie in (0, 1], got {self.subsample!r}")

        rng = np.random.default_rng(self.seed)
        self.init_ = float(np.average(y, weights=w))
        current = np.full(n, self.init_)
        self.estimators_ = []
        self.train_score_ = []
        w_total = float(np.sum(w))
        for _ in range(self.n_estimators):
            residual = y - current
            if self.subsample < 1.0:
                size = max(1, int(round(self.subsample * n)))
                idx = np.sort(rng.choice(n, size=size, replace=False))
            else:
                idx = slice(None)
            tree = RegressionTree(
                max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf
            )
            tree.fit(X[idx], residual[idx], sample_weight=w[idx])
            if self.learning_rate > 0.0:
                current = current + self.learning_rate * tree.predict(X)
            self.estimators_.append(tree)
            self.train_score_.append(float(np.sum(w * (y - current) ** 2) / w_total))
        self.n_features_in_ = d
        return self

    def predict(self, X):
        _check_fitted(self, "estimators_")
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        out = np.full(X.shape[0], self.init_)
        if self.learning_rate > 0.0:
            for tree in self.estimators_:
                out += self.learning_rate * tree.predict(X)
        return out


@dataclass(frozen=True)
class GbrSearchSpace:
    """Random-search space over gradient boosting settings.

    Stage count stays fixed; depth and leaf size are uniform integers,
    the learning rate is log-uniform, and subsample is drawn from a coarse
    grid of fractions.
    """

    n_estimators: int = 100
    max_depth_range: tuple = (1, 20)
    min_samples_leaf_range: tuple = (1, 20)
    learning_rate_range: tuple = (1e-5, 1e-1)
    subsample_choices: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError(f"n_estimators must be >= 1, got {self.n_estimators!r}")
        for name in ("max_depth_range", "min_samples_leaf_range"):
            lo, hi = getattr(self, name)
            if not (1 <= lo <= hi):
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi, got {lo, hi}")
        lo, hi = self.learning_rate_range
        if not (0 < lo <= hi):
            raise ValueError(
                f"learning_rate_range must satisfy 0 < lo <= hi, got {lo, hi}"
            )
        if not self.subsample_choices or any(
            not (0.0 < s <= 1.0) for s in self.subsample_choices
        ):
            raise ValueError("subsample_choices must be fractions in (0, 1]")

    def sample(self, rng: np.random.Generator, seed: int = 0) -> GradientBoostedRegressor:
        """Draw one configured (unfitted) regressor."""
        lo_d, hi_d = self.max_depth_range
        lo_l, hi_l = self.min_samples_leaf_range
        lo_r, hi_r = self.learning_rate_range
        if lo_r == hi_r:
            lr = float(lo_r)
        else:
            lr = float(np.exp(rng.uniform(np.log(lo_r), np.log(hi_r))))
        return GradientBoostedRegressor(
            n_estimators=self.n_estimators,
            max_depth=int(rng.integers(lo_d, hi_d + 1)),
            min_samples_leaf=int(rng.integers(lo_l, hi_l + 1)),
            learning_rate=lr,
            subsample=float(rng.choice(self.subsample_choices)),
            seed=seed,
        )
