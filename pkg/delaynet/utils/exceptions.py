"""
delaynet/utils/exceptions.py

Custom exception hierarchy for delaynet.

Design Decisions:
- All custom exceptions inherit from DelaynetError so callers can catch
  the broad class or specific subclasses.
- Each exception carries a machine-readable `error_code` and the
  `exit_code` the CLI terminates with.
- `detail` holds the actionable hint (which flag or config key to change).
"""

from __future__ import annotations

from typing import Any


class DelaynetError(Exception):
    """Root exception for all delaynet errors."""

    error_code: str = "DELAYNET_ERROR"
    exit_code: int = 1

    def __init__(self, message: str, detail: str = "", **kwargs: Any) -> None:
        super().__init__(message)
        self.message = message
        self.detail = detail
        self.extra = kwargs


class InvalidParameterError(DelaynetError):
    """Raised when an operation's precondition is violated."""

    error_code = "INVALID_PARAMETER"
    exit_code = 2


# ── Data errors ───────────────────────────────────────────────

class IntegrationDivergedError(DelaynetError):
    """Raised when the model state becomes non-finite during integration."""

    error_code = "INTEGRATION_DIVERGED"
    exit_code = 3


class DegenerateRangeError(DelaynetError):
    """Raised when a constant series cannot be mapped onto [-1, 1]."""

    error_code = "DEGENERATE_RANGE"
    exit_code = 3


class SeriesFormatError(DelaynetError):
    """Raised when a persisted series or document cannot be parsed."""

    error_code = "SERIES_FORMAT"
    exit_code = 4


# ── Embedding / spectrum errors ───────────────────────────────

class InsufficientDataError(DelaynetError):
    """Raised when a series is too short for the requested analysis."""

    error_code = "INSUFFICIENT_DATA"
    exit_code = 3


class EmbeddingDimensionNotFoundError(DelaynetError):
    """Raised when no dimension brings the FNN fraction under threshold."""

    error_code = "EMBEDDING_DIMENSION_NOT_FOUND"
    exit_code = 5


class SingularFitError(DelaynetError):
    """Raised when a local linear fit has a rank-deficient neighbour set."""

    error_code = "SINGULAR_FIT"
    exit_code = 5


class EmptyJacobianSequenceError(DelaynetError):
    """Raised when a spectrum is requested from zero Jacobians."""

    error_code = "EMPTY_JACOBIANS"
    exit_code = 5


# ── Network / training errors ─────────────────────────────────

class ShapeMismatchError(DelaynetError):
    """Raised when weights, activations or data disagree in shape."""

    error_code = "SHAPE_MISMATCH"
    exit_code = 2


class AnnealDivergedError(DelaynetError):
    """Raised when every annealing lineage has become non-finite."""

    error_code = "ANNEAL_DIVERGED"
    exit_code = 6


class EmptySweepError(DelaynetError):
    """Raised when a sweep configuration has nothing to run."""

    error_code = "EMPTY_SWEEP"
    exit_code = 2


# ── Configuration errors ──────────────────────────────────────

class ConfigurationError(DelaynetError):
    """Raised when configuration files or environment overrides are invalid."""

    error_code = "CONFIGURATION_ERROR"
    exit_code = 2
