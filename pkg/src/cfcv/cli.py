"""Command line interface.

Subcommands::

    cfcv gen          --config cfg.json --out data_dir
    cfcv select       --config cfg.json --out report.json
    cfcv tune         --config cfg.json --out report.json
    cfcv alpha-sweep  --config cfg.json --out report.json
    cfcv verify       [--seed N]

All experiment settings live in one JSON config file; command line flags
only control I/O (``--out``, ``--format``), parallelism (``--threads``), and
the top-level seed override (``--seed``).  Validation errors name the
offending config key with its dotted path.  Reports are written atomically
(temp file plus rename) as JSON, or as flat per-realization CSV with
``--format csv``.

Exit codes: 0 success, 1 bad usage or config, 2 runtime failure (including
failed verification checks).  Set the ``CFCV_LOG`` environment variable
(DEBUG/INFO/WARNING/ERROR) to control log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from dataclasses import dataclass

from .base_learners import GbrSearchSpace
from .cfr import CfrConfig
from .data import DgpConfig, SplitSpec, sample_realization, save_csv
from .evaluation import (
    ORACLE_METRIC,
    SelectionExperiment,
    TuningExperiment,
    run_selection_experiment,
    run_tuning_experiment,
)
from .exceptions import CfcvError, ConfigError
from .metrics import METRIC_NAMES
from .oracles import run_verification

logger = logging.getLogger(__name__)

__all__ = ["main", "validate_config", "CliConfig"]

# Published search bounds; CLI configs describe benchmark runs, so the
# balance penalty and learning rate must stay inside them.
ALPHA_BOUNDS = (0.01, 100.0)
LEARNING_RATE_BOUNDS = (1e-4, 1e-2)


# -- config schema -----------------------------------------------------------

def _require_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(section, path, allowed):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key (allowed: {sorted(allowed)})")


def _get_int(section, path, key, default, minimum=None, maximum=None):
    v = section.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}, got {v}")
    if maximum is not None and v > maximum:
        raise ConfigError(f"{path}.{key}: must be <= {maximum}, got {v}")
    return v


def _get_number(section, path, key, default, low=None, high=None,
                low_open=False, high_open=False):
    v = section.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    v = float(v)
    if low is not None and (v < low or (low_open and v == low)):
        raise ConfigError(
            f"{path}.{key}: must lie in "
            f"{'(' if low_open else '['}{low}, {high}{')' if high_open else ']'}, got {v}"
        )
    if high is not None and (v > high or (high_open and v == high)):
        raise ConfigError(
            f"{path}.{key}: must lie in "
            f"{'(' if low_open else '['}{low}, {high}{')' if high_open else ']'}, got {v}"
        )
    return v


def _get_bool(section, path, key, default):
    v = section.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{path}.{key}: expected true/false, got {v!r}")
    return v


def _get_str(section, path, key, default, choices=None):
    v = section.get(key, default)
    if not isinstance(v, str):
        raise ConfigError(f"{path}.{key}: expected a string, got {v!r}")
    if choices is not None and v not in choices:
        raise ConfigError(f"{path}.{key}: must be one of {sorted(choices)}, got {v!r}")
    return v


@dataclass(frozen=True)
class CliConfig:
    """Validated, normalized form of one CLI config file."""

    seed: int
    dgp: DgpConfig | None
    csv_paths: tuple
    split: SplitSpec
    n_realizations: int
    metrics: tuple
    propensity: str
    n_trials: int
    collect_scores: bool
    cfr: CfrConfig
    gbr_space: GbrSearchSpace
    alpha_grid: tuple

    def to_dict(self) -> dict:
        """Canonical config dict; validating it again reproduces this config."""
        if self.dgp is not None:
            data = {
                "source": "synthetic",
                "n": self.dgp.n,
                "d": self.dgp.d,
                "confounding_strength": self.dgp.confounding_strength,
                "noise_scale": self.dgp.noise_scale,
                "response_surface": self.dgp.response_surface,
                "seed": self.dgp.seed,
            }
        else:
            data = {"source": "csv", "paths": list(self.csv_paths)}
        return {
            "seed": self.seed,
            "data": data,
            "split": {
                "train_frac": self.split.train_frac,
                "val_frac": self.split.val_frac,
                "test_frac": self.split.test_frac,
                "seed": self.split.seed,
            },
            "experiment": {
                "n_realizations": self.n_realizations,
                "metrics": list(self.metrics),
                "propensity": self.propensity,
                "n_trials": self.n_trials,
                "collect_scores": self.collect_scores,
            },
            "cfr": {f.name: getattr(self.cfr, f.name) for f in dataclasses.fields(self.cfr)},
            "gbr_space": {
                "n_estimators": self.gbr_space.n_estimators,
                "max_depth_range": list(self.gbr_space.max_depth_range),
                "min_samples_leaf_range": list(self.gbr_space.min_samples_leaf_range),
                "learning_rate_range": list(self.gbr_space.learning_rate_range),
                "subsample_choices": list(self.gbr_space.subsample_choices),
            },
            "alpha_grid": list(self.alpha_grid),
        }


def _validate_data(raw) -> tuple:
    section = _require_mapping(raw.get("data", {}), "data")
    source = _get_str(section, "data", "source", "synthetic", choices=("synthetic", "csv"))
    if source == "csv":
        _reject_unknown(section, "data", {"source", "paths"})
        paths = section.get("paths")
        if not isinstance(paths, list) or not paths:
            raise ConfigError("data.paths: expected a non-empty list of file paths")
        for i, p in enumerate(paths):
            if not isinstance(p, str):
                raise ConfigError(f"data.paths[{i}]: expected a string, got {p!r}")
        return None, tuple(paths)
    _reject_unknown(
        section, "data",
        {"source", "n", "d", "confounding_strength", "noise_scale",
         "response_surface", "seed"},
    )
    try:
        dgp = DgpConfig(
            n=_get_int(section, "data", "n", 1000, minimum=4),
            d=_get_int(section, "data", "d", 10, minimum=1),
            confounding_strength=_get_number(
                section, "data", "confounding_strength", 1.0, low=0.0
            ),
            noise_scale=_get_number(
                section, "data", "noise_scale", 1.0, low=0.0, low_open=True
            ),
            response_surface=_get_str(
                section, "data", "response_surface", "linear",
                choices=("linear", "nonlinear-exponential"),
            ),
            seed=_get_int(section, "data", "seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from exc
    return dgp, ()


def _validate_split(raw) -> SplitSpec:
    section = _require_mapping(raw.get("split", {}), "split")
    _reject_unknown(section, "split", {"train_frac", "val_frac", "test_frac", "seed"})
    try:
        return SplitSpec(
            train_frac=_get_number(section, "split", "train_frac", 0.35,
                                   low=0.0, high=1.0, low_open=True, high_open=True),
            val_frac=_get_number(section, "split", "val_frac", 0.35,
                                 low=0.0, high=1.0, low_open=True, high_open=True),
            test_frac=_get_number(section, "split", "test_frac", 0.30,
                                  low=0.0, high=1.0, low_open=True, high_open=True),
            seed=_get_int(section, "split", "seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"split: {exc}") from exc


def _validate_experiment(raw) -> tuple:
    section = _require_mapping(raw.get("experiment", {}), "experiment")
    _reject_unknown(
        section, "experiment",
        {"n_realizations", "metrics", "propensity", "n_trials", "collect_scores"},
    )
    metrics = section.get("metrics", list(METRIC_NAMES))
    if not isinstance(metrics, list) or not metrics:
        raise ConfigError("experiment.metrics: expected a non-empty list")
    allowed = set(METRIC_NAMES) | {ORACLE_METRIC}
    for i, m in enumerate(metrics):
        if m not in allowed:
            raise ConfigError(
                f"experiment.metrics[{i}]: unknown metric {m!r} "
                f"(options: {sorted(allowed)})"
            )
    if len(set(metrics)) != len(metrics):
        raise ConfigError("experiment.metrics: metrics must not repeat")
    return (
        _get_int(section, "experiment", "n_realizations", 20, minimum=1),
        tuple(metrics),
        _get_str(section, "experiment", "propensity", "estimated",
                 choices=("estimated", "true")),
        _get_int(section, "experiment", "n_trials", 30, minimum=2),
        _get_bool(section, "experiment", "collect_scores", False),
    )


def _validate_cfr(raw) -> CfrConfig:
    section = _require_mapping(raw.get("cfr", {}), "cfr")
    fields = {f.name for f in dataclasses.fields(CfrConfig)}
    _reject_unknown(section, "cfr", fields)
    lo_a, hi_a = ALPHA_BOUNDS
    lo_l, hi_l = LEARNING_RATE_BOUNDS
    try:
        return CfrConfig(
            rep_layers=_get_int(section, "cfr", "rep_layers", 2, minimum=1, maximum=3),
            rep_dim=_get_int(section, "cfr", "rep_dim", 20, minimum=1),
            head_layers=_get_int(section, "cfr", "head_layers", 2, minimum=1, maximum=3),
            head_dim=_get_int(section, "cfr", "head_dim", 20, minimum=1),
            alpha=_get_number(section, "cfr", "alpha", 1.0, low=lo_a, high=hi_a),
            learning_rate=_get_number(
                section, "cfr", "learning_rate", 1e-3, low=lo_l, high=hi_l
            ),
            batch_size=_get_int(section, "cfr", "batch_size", 256, minimum=1),
            dropout=_get_number(section, "cfr", "dropout", 0.2,
                                low=0.0, high=1.0, high_open=True),
            epochs=_get_int(section, "cfr", "epochs", 300, minimum=1),
            patience=_get_int(section, "cfr", "patience", 30, minimum=0),
            sinkhorn_reg=_get_number(section, "cfr", "sinkhorn_reg", 0.1,
                                     low=0.0, low_open=True),
            sinkhorn_iters=_get_int(section, "cfr", "sinkhorn_iters", 50, minimum=1),
            ipm_on_full=_get_bool(section, "cfr", "ipm_on_full", False),
            seed=_get_int(section, "cfr", "seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"cfr: {exc}") from exc


def _validate_gbr_space(raw) -> GbrSearchSpace:
    section = _require_mapping(raw.get("gbr_space", {}), "gbr_space")
    _reject_unknown(
        section, "gbr_space",
        {"n_estimators", "max_depth_range", "min_samples_leaf_range",
         "learning_rate_range", "subsample_choices"},
    )

    def pair(key, default, integral):
        v = section.get(key, list(default))
        if (not isinstance(v, list)) or len(v) != 2:
            raise ConfigError(f"gbr_space.{key}: expected a [lo, hi] pair, got {v!r}")
        for item in v:
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                raise ConfigError(f"gbr_space.{key}: expected numbers, got {item!r}")
            if integral and not isinstance(item, int):
                raise ConfigError(f"gbr_space.{key}: expected integers, got {item!r}")
        return tuple(v)

    choices = section.get("subsample_choices",
                          list(GbrSearchSpace().subsample_choices))
    if not isinstance(choices, list) or not choices:
        raise ConfigError("gbr_space.subsample_choices: expected a non-empty list")
    try:
        return GbrSearchSpace(
            n_estimators=_get_int(section, "gbr_space", "n_estimators", 100, minimum=1),
            max_depth_range=pair("max_depth_range", (1, 20), True),
            min_samples_leaf_range=pair("min_samples_leaf_range", (1, 20), True),
            learning_rate_range=pair("learning_rate_range", (1e-5, 1e-1), False),
            subsample_choices=tuple(float(s) for s in choices),
        )
    except ValueError as exc:
        raise ConfigError(f"gbr_space: {exc}") from exc


def _validate_alpha_grid(raw) -> tuple:
    grid = raw.get("alpha_grid", [])
    if not isinstance(grid, list):
        raise ConfigError(f"alpha_grid: expected a list, got {grid!r}")
    lo, hi = ALPHA_BOUNDS
    out = []
    for i, a in enumerate(grid):
        if isinstance(a, bool) or not isinstance(a, (int, float)):
            raise ConfigError(f"alpha_grid[{i}]: expected a number, got {a!r}")
        a = float(a)
        if not (lo <= a <= hi):
            raise ConfigError(
                f"alpha_grid[{i}]: must lie in [{lo}, {hi}], got {a}"
            )
        out.append(a)
    return tuple(out)


def validate_config(raw: dict) -> CliConfig:
    """Validate a raw config dict, filling defaults.

    Raises ConfigError naming the offending key's dotted path.  The result's
    ``to_dict`` is a fixpoint: validating it again gives an equal config.
    """
    raw = _require_mapping(raw, "config")
    _reject_unknown(
        raw, "config",
        {"seed", "data", "split", "experiment", "cfr", "gbr_space", "alpha_grid"},
    )
    dgp, csv_paths = _validate_data(raw)
    n_realizations, metrics, propensity, n_trials, collect = _validate_experiment(raw)
    if csv_paths and n_realizations > len(csv_paths):
        raise ConfigError(
            f"experiment.n_realizations: {n_realizations} exceeds the "
            f"{len(csv_paths)} entries of data.paths"
        )
    if propensity == "true" and dgp is None:
        raise ConfigError(
            "experiment.propensity: 'true' requires the synthetic data source"
        )
    return CliConfig(
        seed=_get_int(raw, "config", "seed", 0),
        dgp=dgp,
        csv_paths=csv_paths,
        split=_validate_split(raw),
        n_realizations=n_realizations,
        metrics=metrics,
        propensity=propensity,
        n_trials=n_trials,
        collect_scores=collect,
        cfr=_validate_cfr(raw),
        gbr_space=_validate_gbr_space(raw),
        alpha_grid=_validate_alpha_grid(raw),
    )


# -- output helpers ----------------------------------------------------------

def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _report_csv(result_dict: dict) -> str:
    """Flatten per-realization measures into one row per (realization, metric)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["realization", "metric", "rank_correlation", "regret", "nrmse",
         "selected", "best"]
    )
    for rec in result_dict["realizations"]:
        for metric in rec["rank_correlation"]:
            writer.writerow([
                rec["index"], metric,
                repr(rec["rank_correlation"][metric]),
                repr(rec["regret"][metric]),
                repr(rec["nrmse"][metric]),
                rec["selected"][metric],
                rec["best"],
            ])
    return buf.getvalue()


def _emit(result_dict: dict, out: str | None, fmt: str) -> None:
    text = (
        json.dumps(result_dict, indent=2, sort_keys=True) + "\n"
        if fmt == "json"
        else _report_csv(result_dict)
    )
    if out is None:
        sys.stdout.write(text)
    else:
        _atomic_write(out, text)
        logger.info("wrote %s", out)


# -- commands ----------------------------------------------------------------

def _load_config(path: str) -> CliConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return validate_config(raw)


def _apply_seed_override(cfg: CliConfig, seed: int | None) -> CliConfig:
    if seed is None:
        return cfg
    return dataclasses.replace(cfg, seed=seed)


def cmd_gen(cfg: CliConfig, out: str | None) -> int:
    if cfg.dgp is None:
        raise ConfigError("data.source: gen requires the synthetic source")
    if out is None:
        raise ConfigError("gen requires --out (file for one realization, directory for several)")
    single = cfg.n_realizations == 1 and out.endswith(".csv")
    if not single:
        os.makedirs(out, exist_ok=True)
    for r in range(cfg.n_realizations):
        data, truth = sample_realization(cfg.dgp, r)
        path = out if single else os.path.join(out, f"realization_{r:03d}.csv")
        tmp = f"{path}.tmp"
        save_csv(tmp, data, truth)
        os.replace(tmp, path)
        logger.info("wrote %s", path)
    print(f"wrote {cfg.n_realizations} realization(s)")
    return 0


def _selection_experiment(cfg: CliConfig) -> SelectionExperiment:
    return SelectionExperiment(
        dgp=cfg.dgp,
        csv_paths=cfg.csv_paths,
        n_realizations=cfg.n_realizations,
        metrics=cfg.metrics,
        propensity=cfg.propensity,
        split=cfg.split,
        cfr=cfg.cfr,
        collect_scores=cfg.collect_scores,
        seed=cfg.seed,
    )


def cmd_select(cfg: CliConfig, out: str | None, fmt: str, n_jobs: int) -> int:
    result = run_selection_experiment(_selection_experiment(cfg), n_jobs=n_jobs)
    _emit(result.to_dict(), out, fmt)
    return 0


def cmd_tune(cfg: CliConfig, out: str | None, fmt: str, n_jobs: int) -> int:
    exp = TuningExperiment(
        dgp=cfg.dgp,
        csv_paths=cfg.csv_paths,
        n_realizations=cfg.n_realizations,
        n_trials=cfg.n_trials,
        metrics=cfg.metrics,
        propensity=cfg.propensity,
        split=cfg.split,
        cfr=cfg.cfr,
        gbr_space=cfg.gbr_space,
        collect_scores=cfg.collect_scores,
        seed=cfg.seed,
    )
    result = run_tuning_experiment(exp, n_jobs=n_jobs)
    _emit(result.to_dict(), out, fmt)
    return 0


def cmd_alpha_sweep(cfg: CliConfig, out: str | None, fmt: str, n_jobs: int) -> int:
    if not cfg.alpha_grid:
        raise ConfigError("alpha_grid: alpha-sweep requires a non-empty grid")
    if fmt != "json":
        raise ConfigError("alpha-sweep reports support --format json only")
    sweep = []
    for alpha in cfg.alpha_grid:
        cfr = dataclasses.replace(cfg.cfr, alpha=alpha)
        exp = _selection_experiment(dataclasses.replace(cfg, cfr=cfr))
        result = run_selection_experiment(exp, n_jobs=n_jobs)
        sweep.append({"alpha": alpha, "aggregate": result.aggregate})
        logger.info("alpha=%g done", alpha)
    _emit({"kind": "alpha_sweep", "config": cfg.to_dict(), "sweep": sweep}, out, fmt)
    return 0


def cmd_verify(seed: int) -> int:
    checks = run_verification(seed=seed)
    all_ok = True
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}")
        all_ok = all_ok and check.passed
    print("verification " + ("passed" if all_ok else "FAILED"))
    return 0 if all_ok else 2


# -- entry point -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Argument errors are usage errors: report them and exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cfcv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the top-level seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for realizations")
        if name != "gen":
            p.add_argument("--out", default=None,
                           help="output path (stdout when omitted)")
            p.add_argument("--format", choices=("json", "csv"), default="json")
        else:
            p.add_argument("--out", default=None, help="output file or directory")
        return p

    add("gen", "generate synthetic realizations as CSV files")
    add("select", "run the candidate-zoo selection experiment")
    add("tune", "run the metric-guided hyperparameter search experiment")
    add("alpha-sweep", "repeat the selection experiment over a balance-penalty grid")
    p_verify = sub.add_parser("verify", help="run the statistical verification suite")
    p_verify.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CFCV_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.seed)
        cfg = _apply_seed_override(_load_config(args.config), args.seed)
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        if args.command == "select":
            return cmd_select(cfg, args.out, args.format, args.threads)
        if args.command == "tune":
            return cmd_tune(cfg, args.out, args.format, args.threads)
        if args.command == "alpha-sweep":
            return cmd_alpha_sweep(cfg, args.out, args.format, args.threads)
        raise AssertionError(f"unhandled command {args.command!r}")
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except CfcvError as exc:
        sys.stderr.write(f"failure: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
