"""Validation metrics for ranking treatment-effect predictors.

Every metric scores a candidate effect predictor tau_hat using only
observational validation data.  Three of the four share one template: build a
per-unit effect proxy tau_tilde, then score by mean((tau_tilde - tau_hat)^2).

ipw
    tau_tilde from inverse-propensity weighted outcomes.  Unbiased

        E[tau_tilde | x] = tau(x)

    under correct propensities, but with variance that grows with the
    outcome scale, so rankings are noisy.
plug_in
    tau_tilde = f1(x) - f0(x) from an auxiliary outcome model; biased
    whenever the auxiliary model is, with zero proxy variance.
cf_cv
    the doubly robust combination of both:

        tau_tilde = (t - e) / (e (1 - e)) * (y - f_t(x)) + f1(x) - f0(x)

    which stays conditionally unbiased when propensities are correct and
    shrinks variance toward the plug-in as f approaches the true surfaces.
tau_risk
    a residual-on-residual objective: mean(((y - m(x)) - (t - e) tau_hat)^2)
    with m an estimate of E[Y | X].

All scores are lower-is-better; selection is the argmin with lexicographic
tie-breaking on the candidate identifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from ._validation import check_binary, check_propensity, check_vector

__all__ = [
    "ipw_tau",
    "dr_tau",
    "plug_in_tau",
    "performance_estimator",
    "tau_risk",
    "MetricArtifacts",
    "MetricScore",
    "METRIC_NAMES",
    "score_tau_hats",
    "score_candidates",
    "select_model",
    "run_cfcv",
    "CfcvResult",
]

METRIC_NAMES = ("ipw", "plug_in", "cf_cv", "tau_risk")


def ipw_tau(t, y, e) -> np.ndarray:
    """Per-unit inverse-propensity weighted effect proxy."""
    t = check_binary(t, name="t")
    n = t.shape[0]
    y = check_vector(y, n=n, name="y")
    e = check_propensity(e, n=n, name="e")
    return t / e * y - (1 - t) / (1.0 - e) * y


def dr_tau(t, y, e, f0, f1) -> np.ndarray:
    """Per-unit doubly robust effect proxy.

    ``f0``/``f1`` are the auxiliary model's potential-outcome predictions at
    each unit.  The residual term uses the factual arm's prediction only.
    """
    t = check_binary(t, name="t")
    n = t.shape[0]
    y = check_vector(y, n=n, name="y")
    e = check_propensity(e, n=n, name="e")
    f0 = check_vector(f0, n=n, name="f0")
    f1 = check_vector(f1, n=n, name="f1")
    f_factual = np.where(t == 1, f1, f0)
    return (t - e) / (e * (1.0 - e)) * (y - f_factual) + f1 - f0


def plug_in_tau(f0, f1) -> np.ndarray:
    """Effect proxy from an auxiliary outcome model alone."""
    f0 = check_vector(f0, name="f0")
    f1 = check_vector(f1, n=f0.shape[0], name="f1")
    return f1 - f0


def performance_estimator(tau_tilde, tau_hat) -> float:
    """Mean squared gap between a per-unit proxy and a candidate's predictions."""
    tau_tilde = check_vector(tau_tilde, name="tau_tilde")
    tau_hat = check_vector(tau_hat, n=tau_tilde.shape[0], name="tau_hat")
    diff = tau_tilde - tau_hat
    return float(np.mean(diff * diff))


def tau_risk(t, y, e, m_hat, tau_hat) -> float:
    """Residual-on-residual risk of a candidate's predictions."""
    t = check_binary(t, name="t")
    n = t.shape[0]
    y = check_vector(y, n=n, name="y")
    e = check_propensity(e, n=n, name="e")
    m_hat = check_vector(m_hat, n=n, name="m_hat")
    tau_hat = check_vector(tau_hat, n=n, name="tau_hat")
    resid = (y - m_hat) - (t - e) * tau_hat
    return float(np.mean(resid * resid))


@dataclass(frozen=True)
class MetricArtifacts:
    """Auxiliary per-unit quantities shared by the metrics on one fold.

    Each metric needs a subset: ipw needs ``e``; plug_in needs ``f0``/``f1``;
    cf_cv needs all three; tau_risk needs ``e`` and ``m_hat``.  Missing
    artifacts raise ConfigError when a metric that needs them is scored.
    """

    e: np.ndarray | None = None
    f0: np.ndarray | None = None
    f1: np.ndarray | None = None
    m_hat: np.ndarray | None = None

    def require(self, metric: str, *names: str):
        values = []
        for name in names:
            v = getattr(self, name)
            if v is None:
                raise ConfigError(
                    f"metric {metric!r} needs artifact {name!r}, which was not provided"
                )
            values.append(v)
        return values


@dataclass(frozen=True)
class MetricScore:
    """Scores of every candidate under one metric (lower is better)."""

    metric: str
    scores: dict[str, float] = field(default_factory=dict)

    @property
    def selected(self) -> str:
        return select_model(self)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "scores": dict(self.scores),
            "selected": self.selected,
        }


def select_model(score: MetricScore) -> str:
    """Identifier of the lowest-scoring candidate; ties break lexicographically."""
    if not score.scores:
        raise ValueError("cannot select from an empty score set")
    return min(score.scores, key=lambda k: (score.scores[k], k))


def _proxy_for(metric: str, data, artifacts: MetricArtifacts):
    t, y = data.treatments, data.outcomes
    if metric == "ipw":
        (e,) = artifacts.require(metric, "e")
        return ipw_tau(t, y, e)
    if metric == "plug_in":
        f0, f1 = artifacts.require(metric, "f0", "f1")
        return plug_in_tau(f0, f1)
    if metric == "cf_cv":
        e, f0, f1 = artifacts.require(metric, "e", "f0", "f1")
        return dr_tau(t, y, e, f0, f1)
    raise ConfigError(f"unknown metric {metric!r}; options: {METRIC_NAMES}")


def score_tau_hats(metric, tau_hats, data, artifacts: MetricArtifacts) -> MetricScore:
    """Score precomputed per-candidate effect predictions under one metric.

    ``tau_hats`` maps candidate identifier to that candidate's predictions on
    ``data``.  The effect proxy is built once and reused for every candidate.
    """
    if metric == "tau_risk":
        e, m_hat = artifacts.require(metric, "e", "m_hat")
        scores = {
            name: tau_risk(data.treatments, data.outcomes, e, m_hat, tau_hat)
            for name, tau_hat in tau_hats.items()
        }
        return MetricScore(metric=metric, scores=scores)
    proxy = _proxy_for(metric, data, artifacts)
    scores = {
        name: performance_estimator(proxy, tau_hat)
        for name, tau_hat in tau_hats.items()
    }
    return MetricScore(metric=metric, scores=scores)


def score_candidates(metric, candidates, data, artifacts: MetricArtifacts) -> MetricScore:
    """Score fitted candidates (objects with identifier and predict) on a fold."""
    tau_hats = {c.identifier: c.predict(data.features) for c in candidates}
    return score_tau_hats(metric, tau_hats, data, artifacts)


def _tuning_split(t, seed, heldout_frac=0.3, max_tries=50):
    # both arms must appear in the fit part or per-arm heads go untrained
    from .exceptions import TuningError

    n = t.shape[0]
    n_held = max(1, int(round(heldout_frac * n)))
    if n - n_held < 2:
        raise ValueError(f"not enough rows ({n}) for an internal holdout")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        perm = rng.permutation(n)
        fit_idx, held_idx = np.sort(perm[n_held:]), np.sort(perm[:n_held])
        arm = t[fit_idx]
        if 0 < arm.sum() < arm.shape[0]:
            return fit_idx, held_idx
    raise TuningError("could not form an internal holdout with both arms in the fit part")


@dataclass(frozen=True)
class CfcvResult:
    """Output of the full selection procedure on a validation fold."""

    score: MetricScore
    selected: str
    e: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    outcome_model: object
    cfr_config: object


def run_cfcv(
    data,
    candidates,
    propensity=None,
    cfr_config=None,
    search_space=None,
    n_trials: int = 10,
    seed: int = 0,
) -> CfcvResult:
    """Select among fitted candidates on a validation fold.

    Trains the weighted counterfactual regressor on the fold (optionally
    random-searching its settings first), forms doubly robust per-unit effect
    proxies, scores every candidate, and returns the argmin.

    Parameters
    ----------
    data : ObservationalDataset
        The validation fold.
    candidates : sequence of Candidate
        Fitted effect predictors to rank.
    propensity : None, array, or fitted model
        ``None`` fits a regularized logistic model on the fold itself.
    cfr_config : CfrConfig, optional
        Settings for the outcome model; defaults to ``CfrConfig()``.
    search_space : CfrSearchSpace, optional
        When given, tune with ``n_trials`` random draws before the final fit.
    """
    from .cfr import CfrConfig, CounterfactualRegressor, tune_cfr
    from .propensity import LogisticPropensity

    if not candidates:
        raise ValueError("candidates must be non-empty")
    X, t, y = data.features, data.treatments, data.outcomes
    if propensity is None:
        prop_model = LogisticPropensity().fit(X, t)
        e = prop_model.predict_propensity(X)
    elif hasattr(propensity, "predict_propensity"):
        e = propensity.predict_propensity(X)
    else:
        e = check_propensity(propensity, n=X.shape[0], name="propensity")

    config = cfr_config if cfr_config is not None else CfrConfig()
    if search_space is not None:
        fit_idx, held_idx = _tuning_split(t, seed)
        config, _ = tune_cfr(
            data.subset(fit_idx),
            data.subset(held_idx),
            e[fit_idx],
            space=search_space,
            n_trials=n_trials,
            base_config=config,
            seed=seed,
        )
    model = CounterfactualRegressor(config=config).fit(X, t, y, e)
    f0, f1 = model.predict_potential_outcomes(X)
    artifacts = MetricArtifacts(e=e, f0=f0, f1=f1)
    score = score_candidates("cf_cv", candidates, data, artifacts)
    return CfcvResult(
        score=score,
        selected=score.selected,
        e=e,
        f0=f0,
        f1=f1,
        outcome_model=model,
        cfr_config=config,
    )
