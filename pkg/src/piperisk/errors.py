"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 2,
``DataValidationError`` -> 3, ``ConvergenceError`` -> 4.
"""


class PipeRiskError(Exception):
    """Base class for all package errors."""


class ConfigError(PipeRiskError, ValueError):
    """Invalid configuration or arguments."""


class DataValidationError(PipeRiskError, ValueError):
    """Input data violates a schema or domain invariant."""


class DuplicateKeyError(DataValidationError):
    def __init__(self, pairs):
        self.pairs = list(pairs)
        shown = ", ".join(f"{p}/{y}" for p, y in self.pairs[:10])
        more = "" if len(self.pairs) <= 10 else f" (+{len(self.pairs) - 10} more)"
        super().__init__(f"duplicate (pipe_id, snapshot_year) keys: {shown}{more}")


class EmptyInputError(DataValidationError):
    pass


class SchemaError(DataValidationError):
    """Required columns are missing or misaligned."""


class WindowError(DataValidationError):
    """A label window reaches outside the observed panel range."""


class InfeasibleSplitError(DataValidationError):
    """A temporal split or CV scheme has an empty training range."""


class SingleClassError(DataValidationError):
    """Only one class present where both are required."""


class NonFiniteError(DataValidationError):
    pass


class ConvergenceError(PipeRiskError, RuntimeError):
    """A solver exhausted its budget without meeting its tolerance."""


class NotFittedError(PipeRiskError, RuntimeError):
    pass


class FingerprintMismatchError(PipeRiskError, ValueError):
    """A truth file was produced by a different generator run."""
