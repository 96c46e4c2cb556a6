"""Experiment harness: how well does each metric pick effect predictors?

Both protocols repeat over independent realizations of a data source.  Each
realization is split into train/validation/test folds; candidates are built
on train, every metric scores them on validation, and ground truth on the
held-out test fold judges the outcome through three oracle measures:

rank correlation
    Spearman correlation between a metric's candidate scores and the
    candidates' true effect risks (higher is better).
regret
    Relative excess true risk of the metric's selected candidate over the
    best candidate (lower is better).
nrmse
    Root mean squared effect error of the selected candidate, normalized by
    the effect's population standard deviation (lower is better).

The selection protocol ranks a fixed zoo of meta-learner candidates; the
tuning protocol ranks random hyperparameter draws for one model family.  An
oracle metric named ``true_risk`` (selection by ground-truth risk on the
validation fold) is available wherever truth is, as the attainable
upper bound.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .base_learners import GbrSearchSpace, GradientBoostedRegressor
from .cfr import CfrConfig, CounterfactualRegressor
from .data import (
    DgpConfig,
    SplitSpec,
    SyntheticDgp,
    load_csv,
    sample_realization,
    split_dataset,
)
from .exceptions import CfcvError, ConfigError
from .meta_learners import DomainAdaptationLearner, build_candidate_set, default_base_learners
from .metrics import METRIC_NAMES, MetricArtifacts, score_tau_hats, select_model
from .propensity import LogisticPropensity

logger = logging.getLogger(__name__)

__all__ = [
    "true_risk",
    "spearman_rank_corr",
    "selection_regret",
    "effect_nrmse",
    "RealizationRecord",
    "ExclusionRecord",
    "ExperimentResult",
    "SelectionExperiment",
    "TuningExperiment",
    "run_selection_experiment",
    "run_tuning_experiment",
    "aggregate_records",
    "REFERENCE_AGGREGATES",
    "ORACLE_METRIC",
]

ORACLE_METRIC = "true_risk"

# Published reference aggregates for this protocol on the IHDP benchmark
# (mean / stderr over realizations, plus the worst single realization).
# Included in reports as context for readers comparing runs.
REFERENCE_AGGREGATES = {
    "benchmark": "ihdp",
    "metrics": {
        "ipw": {
            "rank_correlation": {"mean": 0.195, "stderr": 0.039, "worst": -0.749},
            "regret": {"mean": 1.032, "stderr": 0.100, "worst": 6.779},
            "nrmse": {"mean": 0.336, "stderr": 0.013, "worst": 0.737},
        },
        "tau_risk": {
            "rank_correlation": {"mean": 0.312, "stderr": 0.030, "worst": -0.553},
            "regret": {"mean": 1.392, "stderr": 0.130, "worst": 7.884},
            "nrmse": {"mean": 0.324, "stderr": 0.013, "worst": 0.700},
        },
        "plug_in": {
            "rank_correlation": {"mean": 0.914, "stderr": 0.006, "worst": 0.591},
            "regret": {"mean": 0.073, "stderr": 0.012, "worst": 0.780},
            "nrmse": {"mean": 0.257, "stderr": 0.010, "worst": 0.490},
        },
        "cf_cv": {
            "rank_correlation": {"mean": 0.921, "stderr": 0.005, "worst": 0.666},
            "regret": {"mean": 0.066, "stderr": 0.012, "worst": 0.562},
            "nrmse": {"mean": 0.256, "stderr": 0.009, "worst": 0.483},
        },
    },
}


# -- oracle measures -------------------------------------------------------

def true_risk(tau_true, tau_hat) -> float:
    """Mean squared error of effect predictions against ground truth."""
    tau_true = np.asarray(tau_true, dtype=np.float64)
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    diff = tau_true - tau_hat
    return float(np.mean(diff * diff))


def spearman_rank_corr(a, b) -> float:
    """Spearman correlation with average ranks for ties.

    Returns NaN when either input has zero rank variance (all values tied).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise ValueError("need at least two values for a rank correlation")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    if np.var(ra) == 0.0 or np.var(rb) == 0.0:
        logger.warning("rank correlation undefined: an input is fully tied")
        return float("nan")
    return float(np.corrcoef(ra, rb)[0, 1])


def selection_regret(true_risks: dict, selected: str) -> float:
    """Relative excess true risk of the selected candidate over the best one.

    Falls back to the absolute difference when the best risk is zero.
    """
    if selected not in true_risks:
        raise ValueError(f"selected candidate {selected!r} has no recorded true risk")
    best = min(true_risks.values())
    gap = true_risks[selected] - best
    if best == 0.0:
        logger.warning("best true risk is zero; reporting absolute regret")
        return float(gap)
    return float(gap / best)


def effect_nrmse(tau_true, tau_hat) -> float:
    """Root mean squared effect error over the effect's population spread.

    Uses the population (ddof=0) variance of the true effects; NaN when the
    true effect is constant.
    """
    tau_true = np.asarray(tau_true, dtype=np.float64)
    var = float(np.var(tau_true))
    if var == 0.0:
        logger.warning("true effect is constant; nrmse undefined")
        return float("nan")
    return float(np.sqrt(true_risk(tau_true, tau_hat) / var))


# -- experiment configuration ----------------------------------------------

def _check_common(exp):
    if (exp.dgp is None) == (not exp.csv_paths):
        raise ConfigError("exactly one data source (dgp or csv_paths) is required")
    if exp.n_realizations < 1:
        raise ConfigError(f"n_realizations must be >= 1, got {exp.n_realizations}")
    if exp.csv_paths and exp.n_realizations > len(exp.csv_paths):
        raise ConfigError(
            f"n_realizations={exp.n_realizations} exceeds the {len(exp.csv_paths)} csv paths"
        )
    if not exp.metrics:
        raise ConfigError("metrics must be non-empty")
    allowed = set(METRIC_NAMES) | {ORACLE_METRIC}
    for m in exp.metrics:
        if m not in allowed:
            raise ConfigError(f"unknown metric {m!r}; options: {sorted(allowed)}")
    if len(set(exp.metrics)) != len(exp.metrics):
        raise ConfigError("metrics must not repeat")
    if exp.propensity not in ("estimated", "true"):
        raise ConfigError(
            f"propensity must be 'estimated' or 'true', got {exp.propensity!r}"
        )
    if exp.propensity == "true" and exp.dgp is None:
        raise ConfigError("propensity='true' requires the synthetic source")


@dataclass(frozen=True)
class SelectionExperiment:
    """Protocol settings for ranking the meta-learner candidate zoo."""

    dgp: DgpConfig | None = None
    csv_paths: tuple = ()
    n_realizations: int = 20
    metrics: tuple = METRIC_NAMES
    propensity: str = "estimated"
    split: SplitSpec = field(default_factory=SplitSpec)
    cfr: CfrConfig = field(default_factory=CfrConfig)
    meta_names: tuple | None = None
    collect_scores: bool = False
    seed: int = 0

    def __post_init__(self):
        _check_common(self)
        if self.propensity == "true" and self.csv_paths:
            raise ConfigError("csv sources carry no true propensity")


@dataclass(frozen=True)
class TuningExperiment:
    """Protocol settings for metric-guided hyperparameter search."""

    dgp: DgpConfig | None = None
    csv_paths: tuple = ()
    n_realizations: int = 10
    n_trials: int = 30
    metrics: tuple = METRIC_NAMES + (ORACLE_METRIC,)
    propensity: str = "estimated"
    split: SplitSpec = field(default_factory=SplitSpec)
    cfr: CfrConfig = field(default_factory=CfrConfig)
    gbr_space: GbrSearchSpace = field(default_factory=GbrSearchSpace)
    collect_scores: bool = False
    seed: int = 0

    def __post_init__(self):
        _check_common(self)
        if self.n_trials < 2:
            raise ConfigError(f"n_trials must be >= 2, got {self.n_trials}")


# -- per-realization records ------------------------------------------------

@dataclass(frozen=True)
class RealizationRecord:
    """Oracle measures per metric for one realization."""

    index: int
    rank_correlation: dict
    regret: dict
    nrmse: dict
    selected: dict
    best: str
    scores: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "index": self.index,
            "rank_correlation": dict(self.rank_correlation),
            "regret": dict(self.regret),
            "nrmse": dict(self.nrmse),
            "selected": dict(self.selected),
            "best": self.best,
        }
        if self.scores is not None:
            out["scores"] = {m: dict(s) for m, s in self.scores.items()}
        return out


@dataclass(frozen=True)
class ExclusionRecord:
    """A realization dropped from aggregation, with the reason."""

    index: int
    error: str

    def to_dict(self) -> dict:
        return {"index": self.index, "error": self.error}


@dataclass(frozen=True)
class ExperimentResult:
    """Everything an experiment run produced, JSON-serializable."""

    kind: str
    config: dict
    digest: str
    records: tuple
    exclusions: tuple
    aggregate: dict

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "digest": self.digest,
            "realizations": [r.to_dict() for r in self.records],
            "exclusions": [e.to_dict() for e in self.exclusions],
            "aggregate": self.aggregate,
            "reference": REFERENCE_AGGREGATES,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


# -- shared realization plumbing --------------------------------------------

def _config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _experiment_config_dict(exp) -> dict:
    def convert(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {k: convert(v) for k, v in dataclasses.asdict(value).items()}
        if isinstance(value, tuple):
            return list(value)
        return value

    out = {}
    for f in dataclasses.fields(exp):
        out[f.name] = convert(getattr(exp, f.name))
    return out


def _load_realization(exp, r: int):
    if exp.dgp is not None:
        return sample_realization(exp.dgp, r)
    data, truth = load_csv(exp.csv_paths[r])
    if truth is None:
        raise ConfigError(
            f"csv source {exp.csv_paths[r]!r} carries no ground truth columns"
        )
    return data, truth


def _propensity_model(exp, train):
    if exp.propensity == "true":
        return SyntheticDgp(exp.dgp).propensity_model()
    # clip estimates to the generator's overlap floor; tighter clipping lets
    # a few extreme scores dominate the inverse-propensity terms on small folds
    return LogisticPropensity(clip_eps=0.05).fit(train.features, train.treatments)


def _fit_mean_outcome(X, y, seed: int) -> np.ndarray:
    """Small depth sweep for an E[Y | X] model; returns predictions on X."""
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_held = max(1, n // 4)
    held, fit = perm[:n_held], perm[n_held:]
    best_mse = np.inf
    best_depth = 2
    for depth in (1, 2, 3, 5):
        model = GradientBoostedRegressor(
            n_estimators=100, max_depth=depth, min_samples_leaf=5,
            learning_rate=0.1, seed=seed,
        ).fit(X[fit], y[fit])
        mse = float(np.mean((model.predict(X[held]) - y[held]) ** 2))
        if mse < best_mse:
            best_mse = mse
            best_depth = depth
    final = GradientBoostedRegressor(
        n_estimators=100, max_depth=best_depth, min_samples_leaf=5,
        learning_rate=0.1, seed=seed,
    ).fit(X, y)
    return final.predict(X)


def _validation_artifacts(exp, metrics, val, val_truth, prop_model, r: int):
    """Fit the per-fold auxiliaries each requested metric needs."""
    need_e = any(m in metrics for m in ("ipw", "cf_cv", "tau_risk"))
    need_f = any(m in metrics for m in ("plug_in", "cf_cv"))
    need_m = "tau_risk" in metrics
    e = prop_model.predict_propensity(val.features) if need_e else None
    f0 = f1 = None
    if need_f:
        cfr_cfg = dataclasses.replace(exp.cfr, seed=exp.cfr.seed + r)
        model = CounterfactualRegressor(config=cfr_cfg).fit(
            val.features, val.treatments, val.outcomes, e
            if e is not None
            else prop_model.predict_propensity(val.features),
        )
        f0, f1 = model.predict_potential_outcomes(val.features)
    m_hat = None
    if need_m:
        m_hat = _fit_mean_outcome(val.features, val.outcomes, seed=exp.seed + 7919 * (r + 1))
    return MetricArtifacts(e=e, f0=f0, f1=f1, m_hat=m_hat)


def _judge(metrics, val, val_truth, test_truth, tau_val, tau_test, artifacts,
           index, collect_scores):
    """Score candidates under each metric and judge against ground truth."""
    risks_test = {name: true_risk(test_truth.tau, pred) for name, pred in tau_test.items()}
    ids = sorted(tau_val)
    risk_vec = np.array([risks_test[i] for i in ids])
    best = min(risks_test, key=lambda k: (risks_test[k], k))

    rank_corr, regret, nrmse, selected, all_scores = {}, {}, {}, {}, {}
    for metric in metrics:
        if metric == ORACLE_METRIC:
            if val_truth is None:
                raise ConfigError("metric 'true_risk' requires ground truth")
            scores = {
                name: true_risk(val_truth.tau, pred) for name, pred in tau_val.items()
            }
        else:
            scores = score_tau_hats(metric, tau_val, val, artifacts).scores
        chosen = min(scores, key=lambda k: (scores[k], k))
        score_vec = np.array([scores[i] for i in ids])
        rank_corr[metric] = spearman_rank_corr(score_vec, risk_vec)
        regret[metric] = selection_regret(risks_test, chosen)
        nrmse[metric] = effect_nrmse(test_truth.tau, tau_test[chosen])
        selected[metric] = chosen
        if collect_scores:
            all_scores[metric] = scores

    return RealizationRecord(
        index=index,
        rank_correlation=rank_corr,
        regret=regret,
        nrmse=nrmse,
        selected=selected,
        best=best,
        scores=all_scores if collect_scores else None,
    )


# -- selection protocol ------------------------------------------------------

def _selection_realization(exp: SelectionExperiment, r: int) -> RealizationRecord:
    data, truth = _load_realization(exp, r)
    split = dataclasses.replace(exp.split, seed=exp.split.seed + r)
    parts = split_dataset(data, split, truth)
    train, val, test = parts["train"], parts["val"], parts["test"]
    val_truth, test_truth = parts["val_truth"], parts["test_truth"]

    prop_model = _propensity_model(exp, train)
    candidates = build_candidate_set(train, prop_model, meta_names=exp.meta_names)
    tau_val = {c.identifier: c.predict(val.features) for c in candidates}
    tau_test = {c.identifier: c.predict(test.features) for c in candidates}
    artifacts = _validation_artifacts(exp, exp.metrics, val, val_truth, prop_model, r)
    return _judge(
        exp.metrics, val, val_truth, test_truth, tau_val, tau_test,
        artifacts, r, exp.collect_scores,
    )


def run_selection_experiment(exp: SelectionExperiment, n_jobs: int = 1) -> ExperimentResult:
    """Run the candidate-zoo selection protocol over all realizations.

    Realizations that fail (degenerate folds, diverged fits) are excluded
    from aggregation and reported; the rest aggregate into per-metric mean,
    stderr, and worst-case for each oracle measure.
    """
    records, exclusions = _run_over_realizations(
        exp, _selection_realization, n_jobs=n_jobs
    )
    return ExperimentResult(
        kind="selection",
        config=_experiment_config_dict(exp),
        digest=_config_digest(_experiment_config_dict(exp)),
        records=tuple(records),
        exclusions=tuple(exclusions),
        aggregate=aggregate_records(records, exp.metrics),
    )


# -- tuning protocol ---------------------------------------------------------

def _tuning_realization(exp: TuningExperiment, r: int) -> RealizationRecord:
    data, truth = _load_realization(exp, r)
    split = dataclasses.replace(exp.split, seed=exp.split.seed + r)
    parts = split_dataset(data, split, truth)
    train, val, test = parts["train"], parts["val"], parts["test"]
    val_truth, test_truth = parts["val_truth"], parts["test_truth"]

    prop_model = _propensity_model(exp, train)
    rng = np.random.default_rng(
        np.random.SeedSequence([exp.seed, 104729, r]).generate_state(1)[0]
    )
    tau_val, tau_test = {}, {}
    for j in range(exp.n_trials):
        name = f"trial_{j:03d}"
        learner = DomainAdaptationLearner(
            treated_model=exp.gbr_space.sample(rng, seed=j),
            controls_model=exp.gbr_space.sample(rng, seed=j + 1),
            overall_model=exp.gbr_space.sample(rng, seed=j + 2),
            propensity_model=prop_model,
        )
        learner.fit(train.features, train.treatments, train.outcomes)
        tau_val[name] = learner.predict(val.features)
        tau_test[name] = learner.predict(test.features)

    artifacts = _validation_artifacts(exp, exp.metrics, val, val_truth, prop_model, r)
    return _judge(
        exp.metrics, val, val_truth, test_truth, tau_val, tau_test,
        artifacts, r, exp.collect_scores,
    )


def run_tuning_experiment(exp: TuningExperiment, n_jobs: int = 1) -> ExperimentResult:
    """Run the metric-guided hyperparameter search protocol.

    Each realization draws ``n_trials`` random sub-model configurations for
    the importance-weighted learner; every metric picks its winner from the
    same trials, and the winners' test-fold NRMSE is what aggregates.
    """
    records, exclusions = _run_over_realizations(
        exp, _tuning_realization, n_jobs=n_jobs
    )
    return ExperimentResult(
        kind="tuning",
        config=_experiment_config_dict(exp),
        digest=_config_digest(_experiment_config_dict(exp)),
        records=tuple(records),
        exclusions=tuple(exclusions),
        aggregate=aggregate_records(records, exp.metrics),
    )


# -- shared run/aggregate ----------------------------------------------------

def _run_over_realizations(exp, worker, n_jobs: int):
    records, exclusions = [], []

    def handle(r, outcome, error=None):
        if error is not None:
            logger.warning("realization %d excluded: %s", r, error)
            exclusions.append(ExclusionRecord(index=r, error=str(error)))
        else:
            records.append(outcome)

    if n_jobs == 1:
        for r in range(exp.n_realizations):
            logger.info("realization %d/%d", r + 1, exp.n_realizations)
            try:
                handle(r, worker(exp, r))
            except (CfcvError, np.linalg.LinAlgError) as exc:
                handle(r, None, error=exc)
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(worker, exp, r) for r in range(exp.n_realizations)]
            for r, fut in enumerate(futures):
                try:
                    handle(r, fut.result())
                except (CfcvError, np.linalg.LinAlgError) as exc:
                    handle(r, None, error=exc)
    if not records:
        raise CfcvError(
            f"all {exp.n_realizations} realizations were excluded; "
            "see the exclusion log"
        )
    return records, exclusions


_WORST_DIRECTION = {
    "rank_correlation": min,
    "regret": max,
    "nrmse": max,
}


def aggregate_records(records, metrics) -> dict:
    """Per-metric mean/stderr/worst for each oracle measure.

    NaN values (undefined correlations on degenerate realizations) are
    dropped per measure; ``n_valid`` records how many realizations remained.
    """
    out = {}
    for metric in metrics:
        per_measure = {}
        for measure, worst_fn in _WORST_DIRECTION.items():
            values = np.array([getattr(rec, measure)[metric] for rec in records])
            valid = values[~np.isnan(values)]
            if valid.size == 0:
                per_measure[measure] = {
                    "mean": float("nan"), "stderr": float("nan"),
                    "worst": float("nan"), "n_valid": 0,
                }
                continue
            stderr = float(np.std(valid, ddof=1) / np.sqrt(valid.size)) if valid.size > 1 else 0.0
            per_measure[measure] = {
                "mean": float(np.mean(valid)),
                "stderr": stderr,
                "worst": float(worst_fn(valid)),
                "n_valid": int(valid.size),
            }
        out[metric] = per_measure
    return out
