"""Exception hierarchy shared across the package.

The CLI maps these onto its exit codes, so every error a user can trigger
should derive from one of the four families below.
"""

from __future__ import annotations


class SliceforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(SliceforgeError, ValueError):
    """Invalid configuration or scenario (exit code 2)."""


class DataError(SliceforgeError, ValueError):
    """Input data is unusable for the requested operation (exit code 3)."""


class CompatibilityError(SliceforgeError, ValueError):
    """Artifacts do not fit together, e.g. checkpoint vs. feature layout (exit code 4)."""


class ValidationError(ConfigError):
    """A record is missing fields or carries out-of-domain values."""


class SchemaError(ConfigError):
    """A dataset file lacks a required column."""

    def __init__(self, column: str, path: object = None) -> None:
        self.column = column
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing required column {column!r}{where}")


class EncodingError(ValidationError):
    """A record value lies outside the frozen encoding bounds."""


class InvalidTargetError(ConfigError):
    """An operation was aimed at a slice that does not support it."""


class StratificationError(DataError):
    """A class is missing from the training split."""


class InsufficientDataError(DataError):
    """Not enough samples to train or evaluate."""


class EmptyInputError(DataError):
    """Metrics requested over zero observations."""


class ShapeError(CompatibilityError):
    """Array or window dimensions disagree with the model."""


class NumericError(SliceforgeError, ArithmeticError):
    """Non-finite values showed up during a numeric routine."""


class RejectedNoCapacity(SliceforgeError):
    """The master slice is saturated, so the request is lost.

    ``intended`` carries the reason the request was headed for the master
    slice in the first place.
    """

    def __init__(self, request_id: int, intended: object) -> None:
        self.request_id = request_id
        self.intended = intended
        super().__init__(f"request {request_id}: master slice saturated ({intended})")
