"""Exception hierarchy shared across the package.

Each class maps onto one CLI exit code (see :mod:`sgseg.cli`).
"""


class SgsegError(Exception):
    """Base class for all package errors."""


class DimensionError(SgsegError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(SgsegError, ValueError):
    """A configuration value or combination of values is invalid."""


class ContractError(SgsegError, RuntimeError):
    """A caller violated an operation's precondition."""


class ValidationError(SgsegError, ValueError):
    """Input data failed validation."""


class ParseError(ValidationError):
    """A data file could not be parsed."""


class NumericError(SgsegError, FloatingPointError):
    """A computation produced NaN or Inf."""
