"""Propensity estimation: P(T = 1 | X) models with clipped predictions.

The main estimator is an L2-regularized logistic regression fit by damped
Newton iterations.  Predicted scores are clipped into
``[clip_eps, 1 - clip_eps]`` so that downstream inverse-propensity weights
stay bounded.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ConvergenceError
from ._validation import check_binary, check_both_arms, check_matrix

__all__ = ["LogisticPropensity", "ConstantPropensity"]


class LogisticPropensity(BaseEstimator):
    """L2-penalized logistic regression for treatment assignment.

    Minimizes the negative log-likelihood plus ``l2_penalty / 2`` times the
    squared norm of the slope vector (intercept unpenalized), by Newton steps
    with halving line search.  The default penalty keeps the problem strictly
    convex even under separation.

    Parameters
    ----------
    l2_penalty : float, default 1.0
    clip_eps : float, default 0.01
        Predictions are clipped to ``[clip_eps, 1 - clip_eps]``.
    max_iter : int, default 100
    tol : float, default 1e-6
        Convergence threshold on the gradient norm.  Newton stalls from
        float rounding near the optimum, so demanding much less than this
        can spuriously fail on wide inputs.
    """

    def __init__(
        self,
        l2_penalty: float = 1.0,
        clip_eps: float = 0.01,
        max_iter: int = 100,
        tol: float = 1e-6,
    ):
        self.l2_penalty = l2_penalty
        self.clip_eps = clip_eps
        self.max_iter = max_iter
        self.tol = tol

    def _objective(self, A, t, beta, pen_mask):
        z = A @ beta
        # -loglik = sum log(1 + exp(z)) - t z, computed without overflow.
        nll = float(np.sum(np.logaddexp(0.0, z) - t * z))
        return nll + 0.5 * self.l2_penalty * float(np.sum((beta * pen_mask) ** 2))

    def fit(self, X, t):
        X = check_matrix(X)
        n, d = X.shape
        t = check_binary(t, n=n)
        check_both_arms(t)
        if not np.isfinite(self.l2_penalty) or self.l2_penalty < 0:
            raise ValueError(f"l2_penalty must be finite and >= 0, got {self.l2_penalty!r}")
        if not (0.0 < self.clip_eps < 0.5):
            raise ValueError(f"clip_eps must lie in (0, 0.5), got {self.clip_eps!r}")
        if not isinstance(self.max_iter, (int, np.integer)) or self.max_iter < 1:
            raise ValueError(f"max_iter must be an integer >= 1, got {self.max_iter!r}")

        A = np.hstack([X, np.ones((n, 1))])
        pen_mask = np.ones(d + 1)
        pen_mask[d] = 0.0  # leave the intercept unpenalized
        beta = np.zeros(d + 1)
        t_f = t.astype(np.float64)
        obj = self._objective(A, t_f, beta, pen_mask)

        grad_norm = np.inf
        for it in range(self.max_iter):
            p = expit(A @ beta)
            grad = A.T @ (p - t_f) + self.l2_penalty * (beta * pen_mask)
            grad_norm = float(np.linalg.norm(grad))
            if grad_norm <= self.tol:
                break
            h_w = p * (1.0 - p)
            hess = A.T @ (A * h_w[:, None])
            hess[np.arange(d), np.arange(d)] += self.l2_penalty
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                hess[np.arange(d + 1), np.arange(d + 1)] += 1e-10
                step = np.linalg.solve(hess, grad)
            # Halve the step until the objective stops increasing.
            scale = 1.0
            for _ in range(50):
                candidate = beta - scale * step
                new_obj = self._objective(A, t_f, candidate, pen_mask)
                if new_obj <= obj:
                    break
                scale *= 0.5
            else:
                break
            beta = candidate
            obj = new_obj
        else:
            p = expit(A @ beta)
            grad = A.T @ (p - t_f) + self.l2_penalty * (beta * pen_mask)
            grad_norm = float(np.linalg.norm(grad))

        if grad_norm > self.tol:
            raise ConvergenceError(
                f"logistic fit did not reach tol={self.tol} "
                f"(gradient norm {grad_norm:.3e} after {self.max_iter} iterations)",
                residual=grad_norm,
                n_iter=self.max_iter,
            )
        self.coef_ = beta[:d]
        self.intercept_ = float(beta[d])
        self.n_iter_ = it + 1
        self.grad_norm_ = grad_norm
        self.n_features_in_ = d
        return self

    def predict_propensity(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise NotFittedError(
                "LogisticPropensity is not fitted yet; call fit before predict_propensity"
            )
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        p = expit(X @ self.coef_ + self.intercept_)
        return np.clip(p, self.clip_eps, 1.0 - self.clip_eps)


class ConstantPropensity(BaseEstimator):
    """Fixed known assignment probability, e.g. 0.5 for a randomized trial."""

    def __init__(self, value: float = 0.5):
        self.value = value

    def fit(self, X=None, t=None):
        if not (0.0 < self.value < 1.0):
            raise ValueError(f"value must lie in (0, 1), got {self.value!r}")
        return self

    def predict_propensity(self, X) -> np.ndarray:
        if not (0.0 < self.value < 1.0):
            raise ValueError(f"value must lie in (0, 1), got {self.value!r}")
        X = check_matrix(X)
        return np.full(X.shape[0], float(self.value))
