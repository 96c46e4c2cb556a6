"""Monte Carlo oracles for the statistical guarantees behind the metrics.

Each oracle checks one property of the doubly robust effect proxy by brute
force simulation at fully known covariate points, independent of any model
fitting:

- the algebraic decomposition of the proxy-based risk into true risk, a
  cross term, and a proxy-noise term (exact identity, machine precision);
- conditional unbiasedness of the proxy given correct propensities, with a
  deliberately biased variant as a negative control;
- the closed-form conditional variance (inverse-propensity noise floor plus
  a weighted model-error term) and the cross-arm covariance identity;
- zero-mean-ness of the cross term, which is what makes expected proxy risk
  rank candidates like true risk.

The simulated draws are always fed through the package's own proxy
implementation (:func:`cfcv.metrics.dr_tau`), so these checks exercise the
shipped code path, not a private re-derivation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cfr import balancing_weight_values
from .metrics import dr_tau, ipw_tau

__all__ = [
    "DrPoint",
    "identity_residual",
    "weight_product_error",
    "dr_conditional_variance",
    "dr_conditional_covariance",
    "PointCheck",
    "oracle_dr_unbiased",
    "VarianceCheck",
    "oracle_dr_variance",
    "CrossTermCheck",
    "oracle_cross_term",
    "CheckResult",
    "run_verification",
]


def identity_residual(tau, tau_tilde, tau_hat) -> float:
    """Absolute residual of the proxy-risk decomposition.

    mean((tau_tilde - tau_hat)^2) must equal
    mean((tau - tau_hat)^2) - (2/n) sum((tau_hat - tau)(tau_tilde - tau))
    + mean((tau - tau_tilde)^2) for any three vectors; the residual is pure
    float round-off.
    """
    tau = np.asarray(tau, dtype=np.float64)
    tau_tilde = np.asarray(tau_tilde, dtype=np.float64)
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    lhs = np.mean((tau_tilde - tau_hat) ** 2)
    cross = 2.0 * np.mean((tau_hat - tau) * (tau_tilde - tau))
    rhs = np.mean((tau - tau_hat) ** 2) - cross + np.mean((tau - tau_tilde) ** 2)
    return float(abs(lhs - rhs))


def weight_product_error(e) -> float:
    """Largest deviation of w1(e) * w0(e) from one over the given propensities."""
    e = np.asarray(e, dtype=np.float64)
    ones = np.ones(e.shape[0], dtype=np.int64)
    w1 = balancing_weight_values(e, ones)
    w0 = balancing_weight_values(e, np.zeros_like(ones))
    return float(np.max(np.abs(w1 * w0 - 1.0)))


@dataclass(frozen=True)
class DrPoint:
    """Everything known at one covariate point.

    ``m0``/``m1`` are the true conditional outcome means, ``sd0``/``sd1``
    the conditional noise scales, ``e`` the true propensity, and ``f0``/``f1``
    the auxiliary model's predictions at the point.
    """

    e: float
    m0: float
    m1: float
    f0: float
    f1: float
    sd0: float = 1.0
    sd1: float = 1.0

    @property
    def tau(self) -> float:
        return self.m1 - self.m0


def dr_conditional_variance(point: DrPoint) -> float:
    """Closed-form conditional variance of the doubly robust proxy."""
    e = point.e
    w1 = (1.0 - e) / e
    w0 = e / (1.0 - e)
    noise_floor = point.sd1 ** 2 / e + point.sd0 ** 2 / (1.0 - e)
    model_term = (
        np.sqrt(w1) * (point.f1 - point.m1) + np.sqrt(w0) * (point.f0 - point.m0)
    ) ** 2
    return float(noise_floor + model_term)


def dr_conditional_covariance(point: DrPoint) -> float:
    """Closed-form conditional covariance of the proxy's two arm components."""
    return float(-(point.f1 - point.m1) * (point.f0 - point.m0))


def _draw_point(point: DrPoint, n_draws: int, rng: np.random.Generator):
    t = (rng.random(n_draws) < point.e).astype(np.int64)
    eps = rng.normal(0.0, 1.0, size=n_draws)
    y = np.where(
        t == 1, point.m1 + point.sd1 * eps, point.m0 + point.sd0 * eps
    )
    return t, y


def _dr_components(point: DrPoint, t, y):
    """Arm components whose difference is the doubly robust proxy.

    Implemented independently here; the caller cross-checks their difference
    against the package proxy to tie the two routes together.
    """
    dr1 = t / point.e * (y - point.f1) + point.f1
    dr0 = (1 - t) / (1.0 - point.e) * (y - point.f0) + point.f0
    return dr1, dr0


@dataclass(frozen=True)
class PointCheck:
    """Unbiasedness verdict at one point: |mean - tau| vs 3 standard errors."""

    point: DrPoint
    mean: float
    se: float
    tau: float
    z: float
    passed: bool


def oracle_dr_unbiased(points, n_draws: int = 100_000, seed: int = 0, bias: float = 0.0):
    """Monte Carlo check that the proxy's conditional mean equals tau.

    ``bias`` shifts every proxy draw by a constant; a nonzero value is the
    negative control and should fail the 3-sigma criterion decisively.
    """
    rng = np.random.default_rng(seed)
    checks = []
    for point in points:
        t, y = _draw_point(point, n_draws, rng)
        e_vec = np.full(n_draws, point.e)
        f0_vec = np.full(n_draws, point.f0)
        f1_vec = np.full(n_draws, point.f1)
        proxy = dr_tau(t, y, e_vec, f0_vec, f1_vec) + bias
        mean = float(np.mean(proxy))
        se = float(np.std(proxy, ddof=1) / np.sqrt(n_draws))
        z = (mean - point.tau) / se
        checks.append(
            PointCheck(
                point=point, mean=mean, se=se, tau=point.tau,
                z=float(z), passed=bool(abs(z) < 3.0),
            )
        )
    return checks


@dataclass(frozen=True)
class VarianceCheck:
    """Conditional variance and covariance verdict at one point."""

    point: DrPoint
    var_mc: float
    var_closed: float
    var_rel_err: float
    cov_mc: float
    cov_closed: float
    cov_se: float
    cov_z: float
    component_gap: float
    passed: bool


def oracle_dr_variance(
    point: DrPoint,
    n_draws: int = 1_000_000,
    seed: int = 0,
    var_rtol: float = 0.02,
    n_batches: int = 200,
) -> VarianceCheck:
    """Monte Carlo check of the proxy's conditional variance and covariance.

    The empirical variance must match the closed form within ``var_rtol``
    relatively; the empirical cross-arm covariance must match its closed form
    within three batch-means standard errors.  ``component_gap`` reports the
    worst disagreement between (dr1 - dr0) computed here and the package
    proxy, tying the independent component formulas to the shipped code.
    """
    rng = np.random.default_rng(seed)
    t, y = _draw_point(point, n_draws, rng)
    dr1, dr0 = _dr_components(point, t, y)
    proxy = dr_tau(
        t, y,
        np.full(n_draws, point.e),
        np.full(n_draws, point.f0),
        np.full(n_draws, point.f1),
    )
    component_gap = float(np.max(np.abs((dr1 - dr0) - proxy)))

    var_mc = float(np.var(proxy, ddof=1))
    var_closed = dr_conditional_variance(point)
    var_rel_err = abs(var_mc - var_closed) / var_closed

    cov_closed = dr_conditional_covariance(point)
    batch = n_draws // n_batches
    covs = np.empty(n_batches)
    for b in range(n_batches):
        sl = slice(b * batch, (b + 1) * batch)
        covs[b] = np.cov(dr1[sl], dr0[sl], ddof=1)[0, 1]
    cov_mc = float(np.mean(covs))
    cov_se = float(np.std(covs, ddof=1) / np.sqrt(n_batches))
    cov_z = (cov_mc - cov_closed) / cov_se if cov_se > 0 else 0.0

    passed = bool(
        var_rel_err < var_rtol and abs(cov_z) < 3.0 and component_gap < 1e-10
    )
    return VarianceCheck(
        point=point,
        var_mc=var_mc,
        var_closed=var_closed,
        var_rel_err=float(var_rel_err),
        cov_mc=cov_mc,
        cov_closed=cov_closed,
        cov_se=cov_se,
        cov_z=float(cov_z),
        component_gap=component_gap,
        passed=passed,
    )


@dataclass(frozen=True)
class CrossTermCheck:
    """Zero-mean cross term verdict over a fixed point population."""

    mean_gap: float
    se: float
    z: float
    passed: bool


def oracle_cross_term(
    m0,
    m1,
    e,
    tau_hat,
    f0=None,
    f1=None,
    sd: float = 1.0,
    proxy: str = "dr",
    proxy_bias: float = 0.0,
    n_reps: int = 100_000,
    seed: int = 0,
    chunk: int = 2_000,
) -> CrossTermCheck:
    """Check that proxy risk equals true risk plus proxy noise, in expectation.

    Holds a population of covariate points fixed (through their conditional
    means ``m0``/``m1`` and propensities ``e``) and replicates the
    assignment/outcome draw ``n_reps`` times.  Each replication computes

        gap_r = mean((proxy - tau_hat)^2) - mean((tau - tau_hat)^2)
                - mean((tau - proxy)^2)

    whose expectation is minus the decomposition's cross term: zero whenever
    the proxy is conditionally unbiased.  A biased proxy (``proxy_bias``)
    shifts the expectation away from zero and must fail.
    """
    m0 = np.asarray(m0, dtype=np.float64)
    m1 = np.asarray(m1, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    n = m0.shape[0]
    tau = m1 - m0
    if f0 is None:
        f0 = np.zeros(n)
    if f1 is None:
        f1 = np.zeros(n)
    f0 = np.asarray(f0, dtype=np.float64)
    f1 = np.asarray(f1, dtype=np.float64)

    rng = np.random.default_rng(seed)
    true_term = np.mean((tau - tau_hat) ** 2)
    gaps = np.empty(n_reps)
    done = 0
    while done < n_reps:
        c = min(chunk, n_reps - done)
        t = (rng.random((c, n)) < e).astype(np.int64)
        eps = rng.normal(0.0, 1.0, size=(c, n))
        y = np.where(t == 1, m1, m0) + sd * eps
        # Flatten so the package's own proxy implementation does the math.
        t_flat = t.ravel()
        y_flat = y.ravel()
        e_flat = np.tile(e, c)
        if proxy == "dr":
            proxy_flat = dr_tau(t_flat, y_flat, e_flat, np.tile(f0, c), np.tile(f1, c))
        elif proxy == "ipw":
            proxy_flat = ipw_tau(t_flat, y_flat, e_flat)
        else:
            raise ValueError(f"unknown proxy {proxy!r}; options: 'dr', 'ipw'")
        proxy_mat = proxy_flat.reshape(c, n) + proxy_bias
        risk_hat = np.mean((proxy_mat - tau_hat) ** 2, axis=1)
        noise_term = np.mean((tau - proxy_mat) ** 2, axis=1)
        gaps[done:done + c] = risk_hat - true_term - noise_term
        done += c
    mean_gap = float(np.mean(gaps))
    se = float(np.std(gaps, ddof=1) / np.sqrt(n_reps))
    z = mean_gap / se if se > 0 else 0.0
    return CrossTermCheck(
        mean_gap=mean_gap, se=se, z=float(z), passed=bool(abs(z) < 3.0)
    )


@dataclass(frozen=True)
class CheckResult:
    """One named verification outcome for reporting."""

    name: str
    passed: bool
    detail: str


def run_verification(seed: int = 0) -> list[CheckResult]:
    """Run a fast version of every oracle; used by the CLI verify command."""
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for _ in range(200):
        tau = rng.normal(0.0, 1.0, size=100)
        tau_tilde = tau + rng.normal(0.0, 2.0, size=100)
        tau_hat = tau + rng.normal(0.0, 1.0, size=100)
        worst = max(worst, identity_residual(tau, tau_tilde, tau_hat))
    results.append(
        CheckResult(
            name="risk_decomposition_identity",
            passed=worst < 1e-10,
            detail=f"max residual {worst:.3e} over 200 random triples",
        )
    )

    e = rng.uniform(0.001, 0.999, size=10_000)
    err = weight_product_error(e)
    results.append(
        CheckResult(
            name="balancing_weight_product",
            passed=err < 1e-12,
            detail=f"max |w1*w0 - 1| = {err:.3e} over 10000 propensities",
        )
    )

    points = [
        DrPoint(
            e=float(rng.uniform(0.1, 0.9)),
            m0=float(rng.normal(0, 2)),
            m1=float(rng.normal(0, 2)),
            f0=float(rng.normal(0, 2)),
            f1=float(rng.normal(0, 2)),
        )
        for _ in range(4)
    ]
    checks = oracle_dr_unbiased(points, n_draws=20_000, seed=seed + 1)
    results.append(
        CheckResult(
            name="dr_proxy_unbiased",
            passed=all(c.passed for c in checks),
            detail="max |z| = {:.2f} over {} points".format(
                max(abs(c.z) for c in checks), len(points)
            ),
        )
    )
    biased = oracle_dr_unbiased(points[:1], n_draws=20_000, seed=seed + 2, bias=1.0)
    results.append(
        CheckResult(
            name="dr_proxy_bias_detected",
            passed=not biased[0].passed,
            detail=f"biased control z = {biased[0].z:.1f} (should be far from 0)",
        )
    )

    var_check = oracle_dr_variance(
        DrPoint(e=0.5, m0=0.0, m1=1.0, f0=0.0, f1=1.0),
        n_draws=200_000,
        seed=seed + 3,
        var_rtol=0.05,
    )
    results.append(
        CheckResult(
            name="dr_proxy_variance",
            passed=var_check.passed,
            detail=(
                f"var {var_check.var_mc:.4f} vs closed form {var_check.var_closed:.4f}; "
                f"cov z = {var_check.cov_z:.2f}"
            ),
        )
    )

    n = 100
    cross = oracle_cross_term(
        m0=rng.normal(0, 1, n),
        m1=rng.normal(0, 1, n) + 1.0,
        e=rng.uniform(0.2, 0.8, n),
        tau_hat=rng.normal(1.0, 1.0, n),
        n_reps=20_000,
        seed=seed + 4,
    )
    results.append(
        CheckResult(
            name="cross_term_zero_mean",
            passed=cross.passed,
            detail=f"mean gap {cross.mean_gap:.4f} (z = {cross.z:.2f})",
        )
    )
    return results
