"""Counterfactual regression: weighted two-head network with arm balancing.

The model fits per-arm outcome functions f_t(x) = h(Phi(x), t) by minimizing

    sum_i (w'_{t_i}(x_i) / n) * (f_{t_i}(x_i) - y_i)^2
        + alpha * IPM({Phi(x_i)}_{t_i=0}, {Phi(x_i)}_{t_i=1})

where the per-unit weight w' combines an inverse-propensity balancing factor
with arm-share normalization, and the IPM term is an entropically
regularized transport distance between the arms' representation clouds.

Balancing weights
-----------------
    w_1(x) = (1 - e(x)) / e(x),   w_0(x) = e(x) / (1 - e(x))

These are the simplified forms of (t(1 - 2e) + e^2) / (e(1 - e)); their
product is exactly one for every propensity value.  The normalized training
weight for unit i with arm share pi_t = (1/n) sum I{t_i = t} is

    w'_i = (w_{t_i}(x_i) / 2) / pi_{t_i}.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import TrainingError, TuningError
from .network import Adam, CfrNetwork
from .sinkhorn import sinkhorn_plan
from ._validation import (
    check_binary,
    check_both_arms,
    check_matrix,
    check_propensity,
    check_vector,
    resolve_propensity,
)

__all__ = [
    "BalancingWeights",
    "balancing_weights",
    "CfrConfig",
    "CfrSearchSpace",
    "CounterfactualRegressor",
    "mu_risk",
    "tune_cfr",
    "write_history_csv",
]


@dataclass(frozen=True)
class BalancingWeights:
    """Per-unit balancing factor ``w`` and normalized training weight ``w_prime``."""

    w: np.ndarray
    w_prime: np.ndarray


def balancing_weight_values(e: np.ndarray, t: np.ndarray) -> np.ndarray:
    """w_t(x) for each unit: (1-e)/e when treated, e/(1-e) when control."""
    e = np.asarray(e, dtype=np.float64)
    return np.where(t == 1, (1.0 - e) / e, e / (1.0 - e))


def balancing_weights(e, t) -> BalancingWeights:
    """Compute balancing and normalized training weights for a sample.

    Requires both arms present (the arm shares pi_t must be positive).  At
    e = 0.5 with balanced arms every w' equals 1.
    """
    t = check_binary(t, name="t")
    e = check_propensity(e, n=t.shape[0], name="e")
    check_both_arms(t)
    w = balancing_weight_values(e, t)
    pi1 = float(np.mean(t))
    pi = np.where(t == 1, pi1, 1.0 - pi1)
    return BalancingWeights(w=w, w_prime=(w / 2.0) / pi)


@dataclass(frozen=True)
class CfrConfig:
    """Architecture and optimization settings for the counterfactual regressor.

    ``alpha`` is the balance-penalty strength; ``alpha = 0`` disables the
    transport term entirely, reducing training to weighted factual
    regression.  ``ipm_on_full`` computes the transport term over the whole
    training set each step instead of per minibatch (slower, slightly less
    noisy).
    """

    rep_layers: int = 2
    rep_dim: int = 20
    head_layers: int = 2
    head_dim: int = 20
    alpha: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 256
    dropout: float = 0.2
    epochs: int = 300
    patience: int = 30
    sinkhorn_reg: float = 0.1
    sinkhorn_iters: int = 50
    ipm_on_full: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("rep_dim", "head_dim", "batch_size", "epochs", "sinkhorn_iters"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")
        # zero hidden layers is allowed: identity trunk and/or bare linear heads
        for name in ("rep_layers", "head_layers"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be an integer >= 0, got {v!r}")
        if not isinstance(self.patience, (int, np.integer)) or self.patience < 0:
            raise ValueError(f"patience must be an integer >= 0, got {self.patience!r}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha!r}")
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValueError(
                f"learning_rate must be finite and > 0, got {self.learning_rate!r}"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout!r}")
        if not np.isfinite(self.sinkhorn_reg) or self.sinkhorn_reg <= 0:
            raise ValueError(
                f"sinkhorn_reg must be finite and > 0, got {self.sinkhorn_reg!r}"
            )


class CounterfactualRegressor(BaseEstimator):
    """Two-head outcome model trained with balancing weights and an IPM penalty.

    ``fit`` takes features, treatments, outcomes, and per-unit propensities
    (a vector or a fitted propensity model).  Training uses Adam over
    shuffled minibatches, records per-epoch history, and early-stops when the
    factual MSE has not improved for ``config.patience`` epochs; the
    parameters from the best epoch are kept.

    Attributes after fit
    --------------------
    history_ : list of dict
        Per-epoch ``{"epoch", "weighted_loss", "ipm", "mu_risk"}`` rows.
    best_epoch_ : int
    network_ : the underlying two-head network.
    """

    def __init__(self, config: CfrConfig | None = None):
        self.config = config

    def _resolved_config(self) -> CfrConfig:
        return self.config if self.config is not None else CfrConfig()

    def fit(self, X, t, y, propensity):
        cfg = self._resolved_config()
        X = check_matrix(X)
        n = X.shape[0]
        t = check_binary(t, n=n)
        y = check_vector(y, n=n)
        check_both_arms(t)
        e = resolve_propensity(propensity, X)
        bw = balancing_weights(e, t)
        w_prime = bw.w_prime

        net = CfrNetwork(
            n_features=X.shape[1],
            rep_layers=cfg.rep_layers,
            rep_dim=cfg.rep_dim,
            head_layers=cfg.head_layers,
            head_dim=cfg.head_dim,
            seed=cfg.seed,
        )
        params = net.param_list()
        adam = Adam(params, learning_rate=cfg.learning_rate)
        rng = np.random.default_rng(cfg.seed + 1)

        history = []
        best_mu = np.inf
        best_epoch = -1
        best_snap = net.snapshot()
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            batch_losses = []
            batch_ipms = []
            full_plan_sets = None
            if cfg.ipm_on_full and cfg.alpha > 0.0:
                # One transport solve per epoch over all units, reused by
                # every batch in place of its per-batch term.
                R = net.representation(X)
                R1, R0 = R[t == 1], R[t == 0]
                full_plan_sets = sinkhorn_plan(
                    R1, R0, reg=cfg.sinkhorn_reg, n_iters=cfg.sinkhorn_iters
                ).plan
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                if cfg.ipm_on_full and cfg.alpha > 0.0:
                    # Full-set IPM: do a combined step, batch risk plus the
                    # full-set transport term with its frozen plan.
                    loss, risk, ipm, grads = self._full_ipm_step(
                        net, X, t, y, w_prime, idx, full_plan_sets, cfg, rng
                    )
                else:
                    loss, risk, ipm, grads = net.loss_and_grads(
                        X[idx], t[idx], y[idx], w_prime[idx],
                        alpha=cfg.alpha,
                        sinkhorn_reg=cfg.sinkhorn_reg,
                        sinkhorn_iters=cfg.sinkhorn_iters,
                        dropout=cfg.dropout,
                        rng=rng,
                    )
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}; try a smaller "
                        "learning rate or stronger clipping of propensities"
                    )
                adam.step(params, grads)
                batch_losses.append(risk)
                if cfg.alpha > 0.0:
                    batch_ipms.append(ipm)
            mu = float(np.mean((net.predict_factual(X, t) - y) ** 2))
            history.append({
                "epoch": epoch,
                "weighted_loss": float(np.mean(batch_losses)),
                "ipm": float(np.mean(batch_ipms)) if batch_ipms else 0.0,
                "mu_risk": mu,
            })
            if mu < best_mu:
                best_mu = mu
                best_epoch = epoch
                best_snap = net.snapshot()
            elif epoch - best_epoch >= cfg.patience:
                break
        net.restore(best_snap)

        self.network_ = net
        self.history_ = history
        self.best_epoch_ = best_epoch
        self.n_epochs_ = len(history)
        self.n_features_in_ = X.shape[1]
        return self

    @staticmethod
    def _full_ipm_step(net, X, t, y, w_prime, idx, plan, cfg, rng):
        # Risk gradient from the batch alone.
        loss_r, risk, _, grads_r = net.loss_and_grads(
            X[idx], t[idx], y[idx], w_prime[idx],
            alpha=0.0, dropout=cfg.dropout, rng=rng,
        )
        # Transport gradient from the full set at the epoch's frozen plan.
        loss_i, _, ipm, grads_i = net.loss_and_grads(
            X, t, y, np.zeros_like(w_prime),
            alpha=cfg.alpha,
            sinkhorn_reg=cfg.sinkhorn_reg,
            sinkhorn_iters=cfg.sinkhorn_iters,
            plan=plan,
            dropout=0.0,
        )
        grads = [gr + gi for gr, gi in zip(grads_r, grads_i)]
        return loss_r + loss_i, risk, ipm, grads

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError(
                "CounterfactualRegressor is not fitted yet; call fit first"
            )

    def predict_potential_outcomes(self, X):
        """Return ``(f0, f1)`` predictions for every row of ``X``."""
        self._check_fitted()
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return self.network_.predict_heads(X)

    def predict_factual(self, X, t):
        """Predict the observed-arm outcome f_{t_i}(x_i) per row."""
        self._check_fitted()
        X = check_matrix(X)
        t = check_binary(t, n=X.shape[0])
        f0, f1 = self.predict_potential_outcomes(X)
        return np.where(t == 1, f1, f0)

    def predict_effect(self, X):
        """Predict f1 - f0 (the model's effect estimate) per row."""
        f0, f1 = self.predict_potential_outcomes(X)
        return f1 - f0


def mu_risk(model, X, t, y) -> float:
    """Unweighted factual MSE of a two-head outcome model."""
    X = check_matrix(X)
    t = check_binary(t, n=X.shape[0])
    y = check_vector(y, n=X.shape[0])
    pred = model.predict_factual(X, t)
    return float(np.mean((pred - y) ** 2))


def write_history_csv(path, history) -> None:
    """Dump per-epoch training history rows to a CSV file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "weighted_loss", "ipm", "mu_risk"])
        for row in history:
            writer.writerow([
                row["epoch"], repr(row["weighted_loss"]),
                repr(row["ipm"]), repr(row["mu_risk"]),
            ])


def _log_uniform(rng, bounds):
    lo, hi = bounds
    if lo == hi:
        # degenerate range: hand back the point exactly, no log round-trip
        return float(lo)
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


@dataclass(frozen=True)
class CfrSearchSpace:
    """Random-search space over architecture and optimization settings.

    Depth and width are tied across trunk and heads; alpha and the learning
    rate are drawn log-uniformly.  Batch size and dropout stay fixed at the
    base config's values.
    """

    layer_choices: tuple = (1, 2, 3)
    dim_choices: tuple = (20, 50, 100)
    alpha_range: tuple = (0.01, 100.0)
    learning_rate_range: tuple = (1e-4, 1e-2)

    def __post_init__(self):
        if not self.layer_choices or not self.dim_choices:
            raise ValueError("layer_choices and dim_choices must be non-empty")
        for name in ("alpha_range", "learning_rate_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got {lo, hi}")

    def sample(self, rng: np.random.Generator, base: CfrConfig) -> CfrConfig:
        layers = int(rng.choice(self.layer_choices))
        dim = int(rng.choice(self.dim_choices))
        alpha = _log_uniform(rng, self.alpha_range)
        lr = _log_uniform(rng, self.learning_rate_range)
        return dataclasses.replace(
            base,
            rep_layers=layers,
            head_layers=layers,
            rep_dim=dim,
            head_dim=dim,
            alpha=alpha,
            learning_rate=lr,
        )


def tune_cfr(
    train,
    heldout,
    propensity,
    space: CfrSearchSpace | None = None,
    n_trials: int = 10,
    base_config: CfrConfig | None = None,
    seed: int = 0,
):
    """Random search over ``space``, scored by factual MSE on ``heldout``.

    ``train`` and ``heldout`` are datasets (features/treatments/outcomes);
    ``propensity`` is a fitted model applied to the training fold.  Each
    trial trains one model on ``train`` and scores it on ``heldout``; ties
    keep the earliest trial.  Trials whose training diverges are skipped; if
    every trial diverges, TuningError is raised.

    Returns ``(best_config, trials)`` where ``trials`` is a list of
    ``{"config", "mu_risk"}`` dicts (``mu_risk`` is ``None`` for diverged
    trials).  The returned config carries the base seed, so refitting on
    other data is reproducible.
    """
    space = space if space is not None else CfrSearchSpace()
    base = base_config if base_config is not None else CfrConfig()
    if train.n_units < 2 or heldout.n_units < 1:
        raise ValueError("train and heldout folds must be non-empty")
    e_train = resolve_propensity(propensity, train.features)

    rng = np.random.default_rng(seed)
    best_score = np.inf
    best_config = None
    trials = []
    for trial in range(n_trials):
        cfg = space.sample(rng, base)
        cfg = dataclasses.replace(cfg, seed=base.seed + trial)
        model = CounterfactualRegressor(config=cfg)
        try:
            model.fit(train.features, train.treatments, train.outcomes, e_train)
        except TrainingError:
            trials.append({"config": cfg, "mu_risk": None})
            continue
        score = mu_risk(model, heldout.features, heldout.treatments, heldout.outcomes)
        trials.append({"config": cfg, "mu_risk": score})
        if score < best_score:
            best_score = score
            best_config = dataclasses.replace(cfg, seed=base.seed)
    if best_config is None:
        raise TuningError(f"all {n_trials} tuning trials diverged")
    return best_config, trials
