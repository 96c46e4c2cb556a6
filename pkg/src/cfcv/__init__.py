"""cfcv: model selection for conditional treatment effect predictors.

Ranks candidate effect models using only observational validation data, by
scoring each candidate against doubly robust per-unit effect proxies built
from a balanced counterfactual regression model.  Ships the surrounding
toolkit: synthetic confounded data with ground truth, weighted base
learners, meta-learner candidates, baseline validation metrics, Monte Carlo
verification oracles, and the benchmarking harness.
"""

from .exceptions import (
    CfcvError,
    ConfigError,
    ConvergenceError,
    CsvFormatError,
    GenerationError,
    SplitError,
    TrainingError,
    TuningError,
)
from .data import (
    DgpConfig,
    GroundTruth,
    ObservationalDataset,
    SplitSpec,
    SyntheticDgp,
    TruePropensity,
    generate_synthetic,
    load_csv,
    sample_realization,
    save_csv,
    split_dataset,
)
from .base_learners import (
    GbrSearchSpace,
    GradientBoostedRegressor,
    RegressionTree,
    RidgeRegressor,
)
from .propensity import ConstantPropensity, LogisticPropensity
from .sinkhorn import SinkhornResult, sinkhorn_distance, sinkhorn_plan
from .cfr import (
    BalancingWeights,
    CfrConfig,
    CfrSearchSpace,
    CounterfactualRegressor,
    balancing_weights,
    mu_risk,
    tune_cfr,
)
from .meta_learners import (
    Candidate,
    DomainAdaptationLearner,
    DRLearner,
    SLearner,
    TLearner,
    XLearner,
    build_candidate_set,
    default_base_learners,
)
from .metrics import (
    METRIC_NAMES,
    CfcvResult,
    MetricArtifacts,
    MetricScore,
    dr_tau,
    ipw_tau,
    performance_estimator,
    plug_in_tau,
    run_cfcv,
    score_candidates,
    select_model,
    tau_risk,
)
from .evaluation import (
    REFERENCE_AGGREGATES,
    ExperimentResult,
    RealizationRecord,
    SelectionExperiment,
    TuningExperiment,
    effect_nrmse,
    run_selection_experiment,
    run_tuning_experiment,
    selection_regret,
    spearman_rank_corr,
    true_risk,
)
from .oracles import run_verification

__version__ = "0.1.0"

__all__ = [
    "CfcvError", "ConfigError", "ConvergenceError", "CsvFormatError",
    "GenerationError", "SplitError", "TrainingError", "TuningError",
    "DgpConfig", "GroundTruth", "ObservationalDataset", "SplitSpec",
    "SyntheticDgp", "TruePropensity", "generate_synthetic", "load_csv",
    "sample_realization", "save_csv", "split_dataset",
    "GbrSearchSpace", "GradientBoostedRegressor", "RegressionTree",
    "RidgeRegressor",
    "ConstantPropensity", "LogisticPropensity",
    "SinkhornResult", "sinkhorn_distance", "sinkhorn_plan",
    "BalancingWeights", "CfrConfig", "CfrSearchSpace",
    "CounterfactualRegressor", "balancing_weights", "mu_risk", "tune_cfr",
    "Candidate", "DomainAdaptationLearner", "DRLearner", "SLearner",
    "TLearner", "XLearner", "build_candidate_set", "default_base_learners",
    "METRIC_NAMES", "CfcvResult", "MetricArtifacts", "MetricScore",
    "dr_tau", "ipw_tau", "performance_estimator", "plug_in_tau", "run_cfcv",
    "score_candidates", "select_model", "tau_risk",
    "REFERENCE_AGGREGATES", "ExperimentResult", "RealizationRecord",
    "SelectionExperiment", "TuningExperiment", "effect_nrmse",
    "run_selection_experiment", "run_tuning_experiment", "selection_regret",
    "spearman_rank_corr", "true_risk",
    "run_verification",
    "__version__",
]
