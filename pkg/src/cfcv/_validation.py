"""Input validation helpers shared by estimators and metric functions.

These mirror the flavor of scikit-learn's ``check_array``/``check_X_y`` but
stay small: everything is converted to float64 (or int64 for treatment
indicators), shapes are checked, and non-finite values are rejected eagerly so
downstream linear algebra never sees them.
"""

from __future__ import annotations

import numpy as np


def check_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce ``X`` to a 2-d float64 array with finite entries."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={X.ndim}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} must contain at least one row")
    if X.shape[1] == 0:
        raise ValueError(f"{name} must contain at least one column")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains NaN or infinite entries")
    return X


def check_vector(y, n: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce ``y`` to a 1-d float64 array, optionally of length ``n``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={y.ndim}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{name} has length {y.shape[0]}, expected {n}")
    if not np.isfinite(y).all():
        raise ValueError(f"{name} contains NaN or infinite entries")
    return y


def check_binary(t, n: int | None = None, name: str = "t") -> np.ndarray:
    """Coerce ``t`` to a 1-d int64 array of zeros and ones."""
    t_arr = np.asarray(t)
    if t_arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={t_arr.ndim}")
    if n is not None and t_arr.shape[0] != n:
        raise ValueError(f"{name} has length {t_arr.shape[0]}, expected {n}")
    as_int = t_arr.astype(np.int64, copy=True)
    # Reject 0.5-style values that int-casting would silently truncate.
    if not np.array_equal(np.asarray(t_arr, dtype=np.float64), as_int):
        raise ValueError(f"{name} must contain only 0 and 1")
    if not np.isin(as_int, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return as_int


def check_both_arms(t: np.ndarray, name: str = "t") -> None:
    """Require at least one treated and one control unit."""
    n1 = int(np.sum(t))
    if n1 == 0 or n1 == t.shape[0]:
        raise ValueError(
            f"{name} must contain both treated and control units "
            f"(got {n1} treated out of {t.shape[0]})"
        )


def check_propensity(e, n: int | None = None, name: str = "e") -> np.ndarray:
    """Coerce propensity scores to a 1-d array strictly inside (0, 1)."""
    e = check_vector(e, n=n, name=name)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")
    return e


def check_sample_weight(sample_weight, n: int, name: str = "sample_weight") -> np.ndarray:
    """Coerce sample weights to a non-negative float64 vector with positive sum.

    ``None`` means unit weights.
    """
    if sample_weight is None:
        return np.ones(n, dtype=np.float64)
    w = check_vector(sample_weight, n=n, name=name)
    if np.any(w < 0.0):
        raise ValueError(f"{name} must be non-negative")
    if not np.any(w > 0.0):
        raise ValueError(f"{name} must have at least one positive entry")
    return w


def resolve_propensity(propensity, X: np.ndarray, name: str = "propensity") -> np.ndarray:
    """Turn a propensity spec (vector or fitted model) into per-row scores.

    Accepts either an array of per-unit scores aligned with ``X`` or any
    object exposing ``predict_propensity(X)``.
    """
    if hasattr(propensity, "predict_propensity"):
        e = propensity.predict_propensity(X)
    else:
        e = propensity
    return check_propensity(e, n=X.shape[0], name=name)
