"""Pipe failure risk: panel data, classifiers with temporal CV, and Cox survival models."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DataValidationError,
    FingerprintMismatchError,
    NotFittedError,
    PipeRiskError,
)

__version__ = "0.1.0"
