"""Exception types shared across the package.

Every error message names the offending values (shapes, field names,
operation ids) so failures are diagnosable from the message alone.
"""


class MotionCtxError(Exception):
    """Base class for all package errors."""


class DimensionError(MotionCtxError):
    """Shapes or axes are incompatible for the requested operation."""


class NumericError(MotionCtxError):
    """A non-finite value appeared where finite data is required."""


class DomainError(MotionCtxError):
    """A request is outside the defined task/anchor/metric domain."""


class StateError(MotionCtxError):
    """An object is used in a state that does not support the operation."""


class FormatError(MotionCtxError):
    """A serialized file is malformed or has the wrong magic/version."""


class ConfigError(MotionCtxError):
    """A configuration value is missing, unknown, or out of range."""
