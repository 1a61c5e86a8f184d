"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class PyroError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(PyroError):
    """Column/target names do not match what an operation expects."""


class OrderingError(PyroError):
    """Timestamps are not strictly increasing."""

    def __init__(self, row: int, message: str | None = None) -> None:
        self.row = row
        super().__init__(message or f"non-monotonic timestamp at row {row}")


class EmptyTableError(PyroError):
    """Flattening or fitting produced no usable rows."""


class DimensionError(PyroError):
    """Vector length does not match the feature schema."""


class FitError(PyroError):
    """A tree or forest could not be fitted."""


class DomainError(PyroError):
    """A state vector lies outside its admissible bounds."""


class ConfigError(PyroError):
    """Invalid configuration value; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(f"{key}: {message}")


class UndefinedMetricError(PyroError):
    """A metric is undefined for the given input (e.g. R² of constant targets)."""


class GridTooLargeError(PyroError):
    """Brute-force grid exceeds the evaluation cap."""


class DecodeError(PyroError):
    """Base class for model-binary decoding failures."""


class BadMagicError(DecodeError):
    pass


class UnsupportedVersionError(DecodeError):
    pass


class TruncatedPayloadError(DecodeError):
    pass


class ChecksumError(DecodeError):
    pass
