"""Acceptance checks for the whole package, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantities, so the scoreboard survives in any captured log.  The heavy
experiment runs (criteria 8 through 11) share module fixtures; expect the
full file to take roughly ten to fifteen minutes.
"""

import dataclasses
import time

import numpy as np
import pytest

from cfcv.base_learners import (
    GbrSearchSpace,
    GradientBoostedRegressor,
    RegressionTree,
    RidgeRegressor,
)
from cfcv.cfr import CfrConfig
from cfcv.data import DgpConfig, SplitSpec, sample_realization, save_csv
from cfcv.evaluation import (
    SelectionExperiment,
    TuningExperiment,
    run_selection_experiment,
    run_tuning_experiment,
)
from cfcv.metrics import METRIC_NAMES
from cfcv.network import CfrNetwork
from cfcv.oracles import (
    DrPoint,
    identity_residual,
    oracle_dr_unbiased,
    oracle_dr_variance,
    weight_product_error,
)
from cfcv.sinkhorn import sinkhorn_distance, sinkhorn_plan


@pytest.fixture
def announce(capsys):
    def _announce(number, passed, detail):
        with capsys.disabled():
            status = "PASS" if passed else "FAIL"
            print(f"[{status}] criterion {number}: {detail}")
        assert passed, f"criterion {number}: {detail}"
    return _announce


# frozen experiment settings; see notes on calibration in the project docs
DIRECTIONAL_DGP = DgpConfig(
    n=1000, d=25, confounding_strength=2.0, noise_scale=0.5,
    response_surface="nonlinear-exponential", seed=42,
)
EXPERIMENT_CFR = CfrConfig(
    rep_layers=2, rep_dim=50, head_layers=2, head_dim=50,
    alpha=1.0, epochs=150, patience=30, seed=0,
)
EXPERIMENT_SPLIT = SplitSpec(0.35, 0.35, 0.30, seed=0)


def _directional_experiment():
    return SelectionExperiment(
        dgp=DIRECTIONAL_DGP,
        n_realizations=20,
        metrics=("ipw", "cf_cv"),
        propensity="estimated",
        split=EXPERIMENT_SPLIT,
        cfr=EXPERIMENT_CFR,
        seed=0,
    )


@pytest.fixture(scope="module")
def directional_runs():
    """Two identical candidate-zoo runs: one scored, one for determinism."""
    exp = _directional_experiment()
    start = time.perf_counter()
    first = run_selection_experiment(exp)
    elapsed = time.perf_counter() - start
    second = run_selection_experiment(exp)
    return first, second, elapsed


@pytest.fixture(scope="module")
def tuning_run():
    exp = TuningExperiment(
        dgp=dataclasses.replace(DIRECTIONAL_DGP, noise_scale=1.0),
        n_realizations=10,
        n_trials=30,
        metrics=("ipw", "cf_cv", "true_risk"),
        propensity="estimated",
        split=EXPERIMENT_SPLIT,
        cfr=EXPERIMENT_CFR,
        gbr_space=GbrSearchSpace(
            n_estimators=60,
            max_depth_range=(1, 10),
            min_samples_leaf_range=(1, 10),
            learning_rate_range=(5e-3, 1.0),
            subsample_choices=(0.3, 0.5, 0.7, 1.0),
        ),
        seed=0,
    )
    start = time.perf_counter()
    result = run_tuning_experiment(exp)
    return result, time.perf_counter() - start


@pytest.fixture(scope="module")
def benchmark_format_run(tmp_path_factory):
    """Full four-metric pipeline over CSV files in the benchmark layout."""
    dgp = DgpConfig(
        n=747, d=25, confounding_strength=2.0, noise_scale=0.5,
        response_surface="nonlinear-exponential", seed=7,
    )
    folder = tmp_path_factory.mktemp("benchmark_csvs")
    paths = []
    for r in range(10):
        data, truth = sample_realization(dgp, r)
        path = str(folder / f"realization_{r:03d}.csv")
        save_csv(path, data, truth)
        paths.append(path)
    exp = SelectionExperiment(
        dgp=None,
        csv_paths=tuple(paths),
        n_realizations=10,
        metrics=METRIC_NAMES,
        propensity="estimated",
        split=EXPERIMENT_SPLIT,
        cfr=EXPERIMENT_CFR,
        seed=0,
    )
    start = time.perf_counter()
    result = run_selection_experiment(exp)
    return result, time.perf_counter() - start


def test_criterion_01_risk_decomposition_identity(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        tau = rng.normal(size=100)
        tau_tilde = rng.normal(size=100)
        tau_hat = rng.normal(size=100)
        worst = max(worst, identity_residual(tau, tau_tilde, tau_hat))
    elapsed = time.perf_counter() - start
    announce(1, worst < 1e-10 and elapsed < 1.0,
             f"max identity residual {worst:.3e} < 1e-10 over 1000 triples; "
             f"runtime {elapsed:.2f}s < 1s")


def test_criterion_02_weight_product_identity(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    e = rng.uniform(0.001, 0.999, size=10_000)
    err = weight_product_error(e)
    elapsed = time.perf_counter() - start
    announce(2, err < 1e-12 and elapsed < 1.0,
             f"max |w1*w0 - 1| = {err:.3e} < 1e-12 over 10000 propensities; "
             f"runtime {elapsed:.2f}s < 1s")


def test_criterion_03_dr_proxy_unbiased(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    points = [
        DrPoint(e=float(rng.uniform(0.1, 0.9)),
                m0=float(rng.normal()), m1=float(rng.normal()),
                f0=float(rng.normal()), f1=float(rng.normal()))
        for _ in range(10)
    ]
    clean = oracle_dr_unbiased(points, n_draws=100_000, seed=3)
    biased = oracle_dr_unbiased(points, n_draws=100_000, seed=3, bias=1.0)
    elapsed = time.perf_counter() - start
    worst_z = max(abs(c.z) for c in clean)
    announce(3,
             all(c.passed for c in clean)
             and not any(c.passed for c in biased)
             and elapsed < 30.0,
             f"10 settings within 3*SE at 1e5 draws (worst |z| = {worst_z:.2f}); "
             f"shifted control fails all 10; runtime {elapsed:.1f}s < 30s")


def test_criterion_04_dr_variance_closed_forms(announce):
    start = time.perf_counter()
    matched = DrPoint(e=0.5, m0=0.0, m1=1.0, f0=0.0, f1=1.0)
    delta = 0.5
    offset = DrPoint(e=0.5, m0=0.0, m1=1.0, f0=delta, f1=1.0 + delta)
    check_m = oracle_dr_variance(matched, n_draws=1_000_000, seed=4)
    check_o = oracle_dr_variance(offset, n_draws=1_000_000, seed=5)
    elapsed = time.perf_counter() - start
    ok = (
        check_m.passed and check_o.passed
        and check_m.var_closed == 4.0
        and abs(check_o.var_closed - (4.0 + 4 * delta**2)) < 1e-12
        and check_m.var_rel_err < 0.02 and check_o.var_rel_err < 0.02
        and abs(check_m.cov_mc - check_m.cov_closed) < 3 * check_m.cov_se
        and abs(check_o.cov_mc - check_o.cov_closed) < 3 * check_o.cov_se
        and elapsed < 120.0
    )
    announce(4, ok,
             f"variance {check_m.var_mc:.4f} vs closed 4.0 "
             f"(rel err {check_m.var_rel_err:.4f} < 0.02), offset rel err "
             f"{check_o.var_rel_err:.4f}; covariance within 3*SE; "
             f"runtime {elapsed:.1f}s < 120s")


def test_criterion_05_network_gradients(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    X = rng.normal(size=(10, 3))
    t = np.array([1, 0, 1, 0, 1, 0, 1, 0, 1, 0])
    y = rng.normal(size=10)
    w = rng.uniform(0.5, 2.0, size=10)
    alpha, reg = 1.3, 0.1

    net = CfrNetwork(n_features=3, rep_layers=2, rep_dim=5,
                     head_layers=2, head_dim=4, seed=0)
    R = net.representation(X)
    plan = sinkhorn_plan(R[t == 1], R[t == 0], reg=reg).plan

    _, _, _, grads = net.loss_and_grads(X, t, y, w, alpha,
                                        sinkhorn_reg=reg, plan=plan)
    analytic = np.concatenate([g.ravel() for g in grads])
    theta = net.flat_params()
    eps = 1e-5
    worst = 0.0
    for i in range(theta.size):
        for sign in (1.0, -1.0):
            shifted = theta.copy()
            shifted[i] += sign * eps
            net.set_flat_params(shifted)
            loss, _, _, _ = net.loss_and_grads(X, t, y, w, alpha,
                                               sinkhorn_reg=reg, plan=plan)
            if sign > 0:
                hi = loss
            else:
                lo = loss
        net.set_flat_params(theta)
        fd = (hi - lo) / (2 * eps)
        denom = max(abs(fd), abs(analytic[i]), 1e-8)
        worst = max(worst, abs(fd - analytic[i]) / denom)
    elapsed = time.perf_counter() - start
    announce(5, worst < 1e-4 and elapsed < 10.0,
             f"max gradient rel err {worst:.3e} < 1e-4 over {theta.size} "
             f"parameters; runtime {elapsed:.1f}s < 10s")


def test_criterion_06_sinkhorn_against_sorted_pairing(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    worst_rel = 0.0
    worst_marginal = 0.0
    for _ in range(20):
        m = int(rng.integers(5, 13))
        a = rng.normal(loc=0.0, scale=1.0, size=m)
        b = rng.normal(loc=rng.uniform(-1, 1), scale=1.0, size=m)
        exact = float(np.mean((np.sort(a) - np.sort(b)) ** 2))
        res = sinkhorn_plan(a[:, None], b[:, None], reg=0.01, n_iters=5000)
        worst_rel = max(worst_rel, abs(res.cost - exact) / exact)
        worst_marginal = max(worst_marginal, res.marginal_error)
    A = rng.normal(size=(8, 2))
    B = rng.normal(size=(6, 2))
    gap = abs(
        sinkhorn_distance(A, B, reg=0.05, n_iters=20000, tol=1e-12)
        - sinkhorn_distance(B, A, reg=0.05, n_iters=20000, tol=1e-12)
    )
    elapsed = time.perf_counter() - start
    ok = (worst_rel <= 0.05 and gap < 1e-9 and worst_marginal < 1e-6
          and elapsed < 10.0)
    announce(6, ok,
             f"worst 1-d rel err {worst_rel:.4f} <= 0.05 over 20 pairs; "
             f"symmetry gap {gap:.2e} < 1e-9; marginal violation "
             f"{worst_marginal:.2e} < 1e-6; runtime {elapsed:.1f}s < 10s")


def test_criterion_07_weight_duplication_equivalence(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(10, 18))
        X = rng.normal(size=(n, 3))
        y = rng.normal(size=n)
        w = rng.integers(1, 4, size=n).astype(np.float64)
        Xd = np.repeat(X, w.astype(int), axis=0)
        yd = np.repeat(y, w.astype(int))
        grid = rng.normal(size=(30, 3))
        fits = (
            (RidgeRegressor(l2_penalty=0.5), RidgeRegressor(l2_penalty=0.5)),
            (RegressionTree(max_depth=3, min_samples_leaf=2.0),
             RegressionTree(max_depth=3, min_samples_leaf=2.0)),
            (GradientBoostedRegressor(n_estimators=10, max_depth=2,
                                      min_samples_leaf=2.0, learning_rate=0.5,
                                      subsample=1.0),
             GradientBoostedRegressor(n_estimators=10, max_depth=2,
                                      min_samples_leaf=2.0, learning_rate=0.5,
                                      subsample=1.0)),
        )
        for weighted, duplicated in fits:
            weighted.fit(X, y, sample_weight=w)
            duplicated.fit(Xd, yd)
            worst = max(worst, float(np.max(np.abs(
                weighted.predict(grid) - duplicated.predict(grid)
            ))))
    elapsed = time.perf_counter() - start
    announce(7, worst < 1e-8 and elapsed < 30.0,
             f"max weighted-vs-duplicated prediction gap {worst:.3e} < 1e-8 "
             f"across ridge/tree/boosting on 20 datasets; "
             f"runtime {elapsed:.1f}s < 30s")


def test_criterion_08_selection_beats_ipw(announce, directional_runs):
    result, _, elapsed = directional_runs
    agg = result.aggregate
    cf_rank = agg["cf_cv"]["rank_correlation"]["mean"]
    ipw_rank = agg["ipw"]["rank_correlation"]["mean"]
    cf_worst = agg["cf_cv"]["regret"]["worst"]
    ipw_worst = agg["ipw"]["regret"]["worst"]
    ok = (
        len(result.records) == 20
        and cf_rank > ipw_rank
        and cf_worst <= ipw_worst
        and cf_rank > 0.5
        and elapsed < 1200.0
    )
    announce(8, ok,
             f"mean spearman cf_cv {cf_rank:.3f} > ipw {ipw_rank:.3f} and "
             f"> 0.5; worst regret cf_cv {cf_worst:.3f} <= ipw "
             f"{ipw_worst:.3f}; 20 realizations, 25 candidates; "
             f"runtime {elapsed:.0f}s < 1200s")


def test_criterion_09_tuning_oracle_dominance(announce, tuning_run):
    result, elapsed = tuning_run
    agg = result.aggregate
    oracle = agg["true_risk"]["nrmse"]
    cf = agg["cf_cv"]["nrmse"]
    ipw = agg["ipw"]["nrmse"]

    def within(a, b):
        slack = 2.0 * np.sqrt(a["stderr"] ** 2 + b["stderr"] ** 2)
        return a["mean"] <= b["mean"] + slack

    ok = within(oracle, cf) and within(cf, ipw) and elapsed < 1200.0
    announce(9, ok,
             f"mean NRMSE oracle {oracle['mean']:.3f} <= cf_cv "
             f"{cf['mean']:.3f} <= ipw {ipw['mean']:.3f} (each within 2*SE); "
             f"10 realizations x 30 trials; runtime {elapsed:.0f}s < 1200s")


def test_criterion_10_csv_pipeline_regret(announce, benchmark_format_run):
    result, elapsed = benchmark_format_run
    agg = result.aggregate
    finite = all(
        np.isfinite(agg[m][measure]["mean"])
        for m in METRIC_NAMES
        for measure in ("rank_correlation", "regret", "nrmse")
    )
    worst = {m: agg[m]["regret"]["worst"] for m in METRIC_NAMES}
    cf_best = all(worst["cf_cv"] <= worst[m] for m in METRIC_NAMES)
    ok = len(result.records) == 10 and finite and cf_best
    announce(10, ok,
             "747-row, 25-covariate CSV realizations ran end-to-end "
             f"({len(result.records)}/10); worst-case regret cf_cv "
             f"{worst['cf_cv']:.3f} vs ipw {worst['ipw']:.3f}, plug_in "
             f"{worst['plug_in']:.3f}, tau_risk {worst['tau_risk']:.3f}; "
             f"runtime {elapsed:.0f}s")


def test_criterion_11_bitwise_deterministic_report(announce, directional_runs):
    first, second, _ = directional_runs
    same = first.to_json() == second.to_json()
    announce(11, same,
             f"two identically seeded runs produce byte-identical report "
             f"JSON ({len(first.to_json())} bytes)")
