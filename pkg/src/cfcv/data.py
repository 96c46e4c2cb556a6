"""Observational datasets: containers, synthetic generation, CSV I/O, splits.

The synthetic generator produces confounded treatment assignment with known
potential-outcome surfaces, so every generated dataset carries exact ground
truth (mu0, mu1, tau, propensity).  Files use a flat CSV layout::

    t,y,mu0,mu1,x1,...,xd

where the ``mu0``/``mu1`` columns are optional; ground truth is available
exactly when they are present.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import CsvFormatError, GenerationError, SplitError
from ._validation import check_binary, check_matrix, check_vector

__all__ = [
    "ObservationalDataset",
    "GroundTruth",
    "DgpConfig",
    "SplitSpec",
    "SyntheticDgp",
    "TruePropensity",
    "generate_synthetic",
    "load_csv",
    "save_csv",
    "split_dataset",
]

RESPONSE_SURFACES = ("linear", "nonlinear-exponential")

# Propensities are clipped away from 0/1 so inverse weights stay bounded.
PROPENSITY_FLOOR = 0.05
PROPENSITY_CEIL = 0.95

_MAX_REDRAWS = 10


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ObservationalDataset:
    """A sample of (features, binary treatment, outcome) triples.

    Arrays are copied and marked read-only on construction, so instances can
    be shared freely between pipeline stages.
    """

    features: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        X = check_matrix(self.features, name="features")
        n = X.shape[0]
        t = check_binary(self.treatments, n=n, name="treatments")
        y = check_vector(self.outcomes, n=n, name="outcomes")
        object.__setattr__(self, "features", _freeze(X))
        object.__setattr__(self, "treatments", _freeze(t))
        object.__setattr__(self, "outcomes", _freeze(y))

    @property
    def n_units(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.treatments))

    @property
    def n_control(self) -> int:
        return self.n_units - self.n_treated

    def subset(self, indices) -> "ObservationalDataset":
        """Return a new dataset restricted to ``indices`` (order preserved)."""
        idx = np.asarray(indices)
        return ObservationalDataset(
            features=self.features[idx],
            treatments=self.treatments[idx],
            outcomes=self.outcomes[idx],
        )


@dataclass(frozen=True)
class GroundTruth:
    """Per-unit potential-outcome surfaces aligned with a dataset.

    ``tau`` is always ``mu1 - mu0`` exactly; ``propensity`` is present for
    synthetic data and ``None`` for file-loaded surfaces.
    """

    mu0: np.ndarray
    mu1: np.ndarray
    tau: np.ndarray
    propensity: np.ndarray | None = None

    def __post_init__(self):
        mu0 = check_vector(self.mu0, name="mu0")
        n = mu0.shape[0]
        mu1 = check_vector(self.mu1, n=n, name="mu1")
        tau = check_vector(self.tau, n=n, name="tau")
        if not np.array_equal(tau, mu1 - mu0):
            raise ValueError("tau must equal mu1 - mu0 exactly")
        object.__setattr__(self, "mu0", _freeze(mu0))
        object.__setattr__(self, "mu1", _freeze(mu1))
        object.__setattr__(self, "tau", _freeze(tau))
        if self.propensity is not None:
            e = check_vector(self.propensity, n=n, name="propensity")
            if np.any(e <= 0.0) or np.any(e >= 1.0):
                raise ValueError("propensity must lie strictly inside (0, 1)")
            object.__setattr__(self, "propensity", _freeze(e))

    @classmethod
    def from_surfaces(cls, mu0, mu1, propensity=None) -> "GroundTruth":
        mu0 = np.asarray(mu0, dtype=np.float64)
        mu1 = np.asarray(mu1, dtype=np.float64)
        return cls(mu0=mu0, mu1=mu1, tau=mu1 - mu0, propensity=propensity)

    def subset(self, indices) -> "GroundTruth":
        idx = np.asarray(indices)
        return GroundTruth(
            mu0=self.mu0[idx],
            mu1=self.mu1[idx],
            tau=self.tau[idx],
            propensity=None if self.propensity is None else self.propensity[idx],
        )


@dataclass(frozen=True)
class DgpConfig:
    """Configuration for the synthetic confounded data generating process.

    confounding_strength scales how strongly the treatment logit follows the
    baseline-outcome direction; zero gives a randomized trial with e = 0.5
    everywhere.
    """

    n: int = 1000
    d: int = 10
    confounding_strength: float = 1.0
    noise_scale: float = 1.0
    response_surface: str = "linear"
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 4:
            raise ValueError(f"n must be an integer >= 4, got {self.n!r}")
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ValueError(f"d must be an integer >= 1, got {self.d!r}")
        if not np.isfinite(self.confounding_strength) or self.confounding_strength < 0:
            raise ValueError(
                f"confounding_strength must be finite and >= 0, got {self.confounding_strength!r}"
            )
        if not np.isfinite(self.noise_scale) or self.noise_scale <= 0:
            raise ValueError(f"noise_scale must be finite and > 0, got {self.noise_scale!r}")
        if self.response_surface not in RESPONSE_SURFACES:
            raise ValueError(
                f"response_surface must be one of {RESPONSE_SURFACES}, got {self.response_surface!r}"
            )


@dataclass(frozen=True)
class SplitSpec:
    """Fractional train/validation/test partition sizes.

    Fractions must be positive and sum to one.  Train and validation sizes are
    round(n * frac); the remainder goes to test.
    """

    train_frac: float = 0.35
    val_frac: float = 0.35
    test_frac: float = 0.30
    seed: int = 0

    def __post_init__(self):
        for name in ("train_frac", "val_frac", "test_frac"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {v!r}")
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total!r}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        n_train = int(round(n * self.train_frac))
        n_val = int(round(n * self.val_frac))
        n_test = n - n_train - n_val
        return n_train, n_val, n_test


class TruePropensity:
    """Expose a known propensity function through the fitted-model interface."""

    def __init__(self, fn):
        self._fn = fn

    def predict_propensity(self, X) -> np.ndarray:
        X = check_matrix(X)
        e = np.asarray(self._fn(X), dtype=np.float64)
        return check_vector(e, n=X.shape[0], name="propensity")


class SyntheticDgp:
    """Confounded data generating process with analytic ground truth.

    Coefficients are drawn once from the config seed, so two instances built
    from equal configs define identical populations.  The treatment logit is
    aligned with the baseline-outcome direction, which makes naive outcome
    comparisons biased whenever ``confounding_strength > 0``.

    Surfaces
    --------
    linear:
        mu0(x) = x @ b0,  mu1(x) = mu0(x) + 1 + x @ b_het
    nonlinear-exponential:
        mu0(x) = exp((x + 0.5) @ b_exp),  mu1(x) = x @ b0 + 2

    Both give heterogeneous effects; the exponential surface adds curvature
    that linear learners cannot capture.
    """

    def __init__(self, config: DgpConfig):
        self.config = config
        d = config.d
        rng = np.random.default_rng(config.seed)
        self._b0 = rng.normal(0.0, 1.0, size=d) / np.sqrt(d)
        self._b_het = rng.normal(0.0, 1.0, size=d) / np.sqrt(d)
        self._b_exp = rng.normal(0.0, 1.0, size=d) * (0.4 / np.sqrt(d))
        # Confound through the direction that drives the baseline outcome.
        norm = float(np.linalg.norm(self._b0))
        self._b_prop = self._b0 / norm if norm > 0 else np.zeros(d)

    def sample_features(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, 1.0, size=(n, self.config.d))

    def propensity_at(self, X) -> np.ndarray:
        X = check_matrix(X)
        logits = self.config.confounding_strength * (X @ self._b_prop)
        return np.clip(expit(logits), PROPENSITY_FLOOR, PROPENSITY_CEIL)

    def surfaces_at(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = check_matrix(X)
        if self.config.response_surface == "linear":
            mu0 = X @ self._b0
            mu1 = mu0 + 1.0 + X @ self._b_het
        else:
            mu0 = np.exp((X + 0.5) @ self._b_exp)
            mu1 = X @ self._b0 + 2.0
        return mu0, mu1

    def truth_at(self, X) -> GroundTruth:
        mu0, mu1 = self.surfaces_at(X)
        return GroundTruth.from_surfaces(mu0, mu1, propensity=self.propensity_at(X))

    def propensity_model(self) -> TruePropensity:
        return TruePropensity(self.propensity_at)

    def sample_assignment(self, X, rng: np.random.Generator) -> np.ndarray:
        e = self.propensity_at(X)
        return (rng.random(e.shape[0]) < e).astype(np.int64)

    def sample_outcome(self, X, t, rng: np.random.Generator) -> np.ndarray:
        mu0, mu1 = self.surfaces_at(X)
        noise = self.config.noise_scale * rng.normal(0.0, 1.0, size=mu0.shape[0])
        return np.where(t == 1, mu1, mu0) + noise

    def sample(self, rng: np.random.Generator | None = None):
        """Draw one dataset of ``config.n`` units with its ground truth.

        Treatment assignment is redrawn (bounded number of times) if a draw
        leaves one arm empty; with the clipped propensities this is only a
        realistic concern at very small n.
        """
        if rng is None:
            rng = np.random.default_rng(self.config.seed + 1)
        X = self.sample_features(self.config.n, rng)
        t = self.sample_assignment(X, rng)
        for _ in range(_MAX_REDRAWS):
            n1 = int(t.sum())
            if 0 < n1 < self.config.n:
                break
            t = self.sample_assignment(X, rng)
        else:
            raise GenerationError(
                f"treatment assignment left one arm empty after {_MAX_REDRAWS} redraws "
                f"(n={self.config.n})"
            )
        y = self.sample_outcome(X, t, rng)
        data = ObservationalDataset(features=X, treatments=t, outcomes=y)
        return data, self.truth_at(X)


def generate_synthetic(config: DgpConfig):
    """Generate one confounded dataset with ground truth from ``config``.

    Deterministic in ``config.seed``: equal configs give bitwise-equal arrays.
    """
    return SyntheticDgp(config).sample()


def _derive_dgp_seed(base_seed: int, realization: int) -> int:
    # Stable scalar seed per realization; SeedSequence keeps streams disjoint.
    return int(np.random.SeedSequence([base_seed, realization]).generate_state(1)[0])


def sample_realization(config: DgpConfig, realization: int):
    """Draw realization ``realization`` of the process defined by ``config``.

    A pure function of ``(config, realization)``: the population (coefficient
    draws) is shared across realizations, only the sampling stream differs.
    """
    if realization < 0:
        raise ValueError(f"realization must be >= 0, got {realization}")
    dgp = SyntheticDgp(config)
    rng = np.random.default_rng(_derive_dgp_seed(config.seed, realization))
    return dgp.sample(rng)


def generate_realizations(config: DgpConfig, n_realizations: int):
    """Yield ``(data, truth)`` pairs for independently seeded realizations."""
    if n_realizations < 1:
        raise ValueError(f"n_realizations must be >= 1, got {n_realizations}")
    for r in range(n_realizations):
        yield sample_realization(config, r)


def save_csv(path, data: ObservationalDataset, truth: GroundTruth | None = None) -> None:
    """Write a dataset (optionally with mu0/mu1 ground truth) to ``path``.

    Floats are written with shortest round-trip repr, so load_csv recovers the
    arrays bit for bit.
    """
    header = ["t", "y"]
    if truth is not None:
        if truth.mu0.shape[0] != data.n_units:
            raise ValueError("truth is not aligned with data")
        header += ["mu0", "mu1"]
    header += [f"x{j + 1}" for j in range(data.n_features)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n_units):
            row = [str(int(data.treatments[i])), repr(float(data.outcomes[i]))]
            if truth is not None:
                row += [repr(float(truth.mu0[i])), repr(float(truth.mu1[i]))]
            row += [repr(float(v)) for v in data.features[i]]
            writer.writerow(row)


def _parse_float(token: str, line_no: int, column: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise CsvFormatError(
            f"line {line_no}: column {column!r} is not a number: {token!r}"
        ) from None
    if not np.isfinite(v):
        raise CsvFormatError(f"line {line_no}: column {column!r} is not finite: {token!r}")
    return v


def load_csv(path):
    """Load ``(dataset, truth_or_None)`` from a ``t,y[,mu0,mu1],x1..xd`` file.

    Ground truth is returned exactly when the mu0/mu1 columns are present.
    Malformed rows raise CsvFormatError naming the file line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("line 1: file is empty") from None
        header = [h.strip() for h in header]
        if header[:2] != ["t", "y"]:
            raise CsvFormatError(
                f"line 1: header must start with 't,y', got {','.join(header[:2])!r}"
            )
        rest = header[2:]
        has_truth = rest[:2] == ["mu0", "mu1"]
        if has_truth:
            rest = rest[2:]
        expected_x = [f"x{j + 1}" for j in range(len(rest))]
        if len(rest) == 0 or rest != expected_x:
            raise CsvFormatError(
                "line 1: covariate columns must be named x1..xd in order "
                f"(got {rest!r})"
            )
        d = len(rest)
        width = len(header)

        t_rows, y_rows, mu0_rows, mu1_rows, x_rows = [], [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) == 0:
                continue
            if len(row) != width:
                raise CsvFormatError(
                    f"line {line_no}: expected {width} fields, got {len(row)}"
                )
            t_tok = row[0].strip()
            if t_tok not in ("0", "1"):
                raise CsvFormatError(
                    f"line {line_no}: treatment must be 0 or 1, got {t_tok!r}"
                )
            t_rows.append(int(t_tok))
            y_rows.append(_parse_float(row[1], line_no, "y"))
            offset = 2
            if has_truth:
                mu0_rows.append(_parse_float(row[2], line_no, "mu0"))
                mu1_rows.append(_parse_float(row[3], line_no, "mu1"))
                offset = 4
            x_rows.append(
                [_parse_float(row[offset + j], line_no, f"x{j + 1}") for j in range(d)]
            )

    if not t_rows:
        raise CsvFormatError("line 2: file contains a header but no data rows")
    data = ObservationalDataset(
        features=np.asarray(x_rows, dtype=np.float64),
        treatments=np.asarray(t_rows, dtype=np.int64),
        outcomes=np.asarray(y_rows, dtype=np.float64),
    )
    truth = None
    if has_truth:
        truth = GroundTruth.from_surfaces(
            np.asarray(mu0_rows, dtype=np.float64),
            np.asarray(mu1_rows, dtype=np.float64),
        )
    return data, truth


def split_dataset(
    data: ObservationalDataset,
    spec: SplitSpec,
    truth: GroundTruth | None = None,
    max_tries: int = 100,
):
    """Randomly partition units into train/validation/test folds.

    Returns ``(train, val, test)`` index arrays plus the three data subsets
    (and truth subsets when provided), packed as a dict.  Train and validation
    folds are guaranteed to contain both arms; permutations are redrawn up to
    ``max_tries`` times before raising SplitError.  Identical specs give
    identical partitions.
    """
    n = data.n_units
    n_train, n_val, n_test = spec.sizes(n)
    if n_train < 2 or n_val < 2 or n_test < 1:
        raise SplitError(
            f"n={n} is too small for fractions "
            f"({spec.train_frac}, {spec.val_frac}, {spec.test_frac})"
        )
    rng = np.random.default_rng(spec.seed)
    t = data.treatments
    for _ in range(max_tries):
        perm = rng.permutation(n)
        idx_train = perm[:n_train]
        idx_val = perm[n_train:n_train + n_val]
        idx_test = perm[n_train + n_val:]
        ok = True
        for idx in (idx_train, idx_val):
            arm = t[idx]
            if arm.sum() == 0 or arm.sum() == arm.shape[0]:
                ok = False
                break
        if ok:
            break
    else:
        raise SplitError(
            f"no permutation with both arms in train and validation after {max_tries} tries"
        )

    out = {
        "indices": (idx_train, idx_val, idx_test),
        "train": data.subset(idx_train),
        "val": data.subset(idx_val),
        "test": data.subset(idx_test),
    }
    if truth is not None:
        out["train_truth"] = truth.subset(idx_train)
        out["val_truth"] = truth.subset(idx_val)
        out["test_truth"] = truth.subset(idx_test)
    return out
