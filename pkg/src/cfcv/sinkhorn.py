"""Entropic optimal transport between two point clouds.

Used as the distributional distance between treated and control
representations.  The scaling iterations run entirely in log space on dual
potentials, so small regularization values (well below 1e-3) do not
underflow.  Convergence at small regularization is accelerated by epsilon
scaling: the solver starts near the cost scale and halves the temperature
down to the target, warm-starting the potentials at each stage.  The
returned plan is projected onto the transport polytope (rescale rows and
columns, spread the leftover as a rank-one correction), so its marginals
are exact up to float round-off regardless of where the iterations stopped.
Marginals are uniform over each cloud and the ground cost is squared
Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError
from ._validation import check_matrix

__all__ = ["SinkhornResult", "squared_distances", "sinkhorn_plan", "sinkhorn_distance"]


@dataclass(frozen=True)
class SinkhornResult:
    """Transport cost ``<plan, cost>`` plus diagnostics.

    ``marginal_error`` is the largest absolute violation of the row/column
    sum constraints at the returned plan; ``n_iter`` counts scaling updates
    across all temperature stages.
    """

    cost: float
    plan: np.ndarray
    n_iter: int
    marginal_error: float


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clamped at zero.

    The expanded form ||a||^2 + ||b||^2 - 2<a, b> can dip a hair below zero
    for near-identical points; clamping keeps costs valid.
    """
    sq_a = np.sum(A * A, axis=1)
    sq_b = np.sum(B * B, axis=1)
    C = sq_a[:, None] + sq_b[None, :] - 2.0 * (A @ B.T)
    np.maximum(C, 0.0, out=C)
    return C


def _lse_rows(S: np.ndarray) -> np.ndarray:
    mx = S.max(axis=1)
    return mx + np.log(np.exp(S - mx[:, None]).sum(axis=1))


def _lse_cols(S: np.ndarray) -> np.ndarray:
    mx = S.max(axis=0)
    return mx + np.log(np.exp(S - mx[None, :]).sum(axis=0))


def _round_to_feasible(P: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Project an almost-feasible plan onto the transport polytope.

    Rescales rows then columns so neither marginal is exceeded, and spreads
    the remaining mass as a rank-one correction.  The result has exact
    marginals up to float round-off, and its cost differs from the input's
    by at most the input's marginal violation times the largest cost entry.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        row = P.sum(axis=1)
        scale = np.where(row > mu, mu / row, 1.0)
        P = P * scale[:, None]
        col = P.sum(axis=0)
        scale = np.where(col > nu, nu / col, 1.0)
        P = P * scale[None, :]
    err_r = mu - P.sum(axis=1)
    err_c = nu - P.sum(axis=0)
    total = err_r.sum()
    if total > 0.0:
        P = P + np.outer(err_r, err_c) / total
    return P


def sinkhorn_plan(
    A,
    B,
    reg: float = 0.1,
    n_iters: int = 1000,
    tol: float = 1e-6,
    require_converged: bool = False,
) -> SinkhornResult:
    """Solve entropically regularized transport between clouds ``A`` and ``B``.

    Parameters
    ----------
    A, B : arrays of shape (m, k) and (l, k)
        The two point clouds; both get uniform mass.
    reg : float
        Entropic regularization strength (> 0).  Smaller values approach the
        unregularized optimum more closely.
    n_iters : int
        Total budget of scaling updates across all temperature stages.
    tol : float
        Stop once the worst marginal violation falls below this.
    require_converged : bool
        When True, raise ConvergenceError if ``tol`` is not reached.

    Returns
    -------
    SinkhornResult with the transport cost, the (m, l) plan, the update
    count, and the final marginal violation.
    """
    A = check_matrix(A, name="A")
    B = check_matrix(B, name="B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(
            f"point clouds must share a dimension, got {A.shape[1]} and {B.shape[1]}"
        )
    if not np.isfinite(reg) or reg <= 0:
        raise ValueError(f"reg must be finite and > 0, got {reg!r}")
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters!r}")

    m, l = A.shape[0], B.shape[0]
    C = squared_distances(A, B)
    log_mu = np.full(m, -np.log(m))
    log_nu = np.full(l, -np.log(l))
    mu = np.exp(log_mu)
    nu = np.exp(log_nu)
    f = np.zeros(m)
    g = np.zeros(l)

    # Temperature schedule: halve from the cost scale down to the target.
    c_scale = float(C.max())
    stages = []
    r = max(reg, c_scale / 4.0)
    while r > reg * 1.000001:
        stages.append(r)
        r /= 2.0
    stages.append(reg)
    inner_cap = max(5, n_iters // (2 * len(stages)))

    def plan_at(sreg):
        return np.exp((f[:, None] + g[None, :] - C) / sreg)

    used = 0
    err = np.inf
    P = plan_at(stages[0])
    for k, sreg in enumerate(stages):
        final = k == len(stages) - 1
        stage_tol = tol if final else max(tol, 1e-3)
        cap = n_iters - used if final else min(inner_cap, n_iters - used)
        for _ in range(cap):
            f = sreg * (log_mu - _lse_rows((g[None, :] - C) / sreg))
            g = sreg * (log_nu - _lse_cols((f[:, None] - C) / sreg))
            used += 1
            P = plan_at(sreg)
            err = max(
                float(np.max(np.abs(P.sum(axis=1) - mu))),
                float(np.max(np.abs(P.sum(axis=0) - nu))),
            )
            if err < stage_tol:
                break
        if used >= n_iters:
            break
    if require_converged and err >= tol:
        raise ConvergenceError(
            f"transport marginals violated by {err:.3e} after {used} updates "
            f"(tol={tol})",
            residual=err,
            n_iter=used,
        )
    P = _round_to_feasible(P, mu, nu)
    err = max(
        float(np.max(np.abs(P.sum(axis=1) - mu))),
        float(np.max(np.abs(P.sum(axis=0) - nu))),
    )
    cost = float(np.sum(P * C))
    return SinkhornResult(cost=cost, plan=P, n_iter=used, marginal_error=err)


def sinkhorn_distance(A, B, reg: float = 0.1, n_iters: int = 1000, tol: float = 1e-6) -> float:
    """Transport cost only; see :func:`sinkhorn_plan` for semantics."""
    return sinkhorn_plan(A, B, reg=reg, n_iters=n_iters, tol=tol).cost
