"""Exception hierarchy for the cfcv package.

Everything raised deliberately by this package derives from :class:`CfcvError`,
so callers can catch one type at the boundary.  Input-shape and value problems
raise plain ``ValueError`` (via the validation helpers) to stay consistent with
the scikit-learn estimators this package interoperates with.
"""


class CfcvError(Exception):
    """Base class for errors raised by cfcv."""


class ConfigError(CfcvError):
    """A configuration value or combination of values is invalid.

    The message names the offending field (dotted path for nested configs).
    """


class CsvFormatError(CfcvError):
    """A dataset file does not match the expected column layout.

    Messages include the 1-based file line number where parsing failed.
    """


class GenerationError(CfcvError):
    """Synthetic data generation produced a degenerate sample repeatedly."""


class SplitError(CfcvError):
    """No admissible train/validation/test partition could be found."""


class ConvergenceError(CfcvError):
    """An iterative fit stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, n_iter=None):
        super().__init__(message)
        self.residual = residual
        self.n_iter = n_iter


class TrainingError(CfcvError):
    """Network training produced a non-finite loss or gradient."""


class TuningError(CfcvError):
    """Every trial of a hyperparameter search failed."""
