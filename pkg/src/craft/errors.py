"""Exception types shared across the package."""


class CraftError(Exception):
    """Base class for all package errors."""


class DimensionError(CraftError, ValueError):
    """Array shapes do not agree with what an operation expects."""


class StateError(CraftError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NonFiniteError(CraftError, FloatingPointError):
    """A loss or gradient contains NaN or infinity."""


class FormatError(CraftError, ValueError):
    """A file on disk is malformed, truncated or of an unsupported version."""


class ValidationError(CraftError, ValueError):
    """A configuration or specification object is invalid."""
