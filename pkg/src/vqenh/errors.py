"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes (see ``vqenh.cli``).
"""


class VqenhError(Exception):
    """Base class for all package errors."""


class InvalidInputError(VqenhError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(InvalidInputError):
    """Array dimensions do not satisfy an operation's contract."""


class UnknownQPError(InvalidInputError):
    """A QP value is not part of the trained vocabulary."""


class ConfigError(VqenhError, ValueError):
    """A configuration value or combination is invalid."""


class FormatError(VqenhError, IOError):
    """A file's header or size contradicts its declared format."""


class NumericError(VqenhError, ArithmeticError):
    """A computation produced non-finite values."""


class PluginError(VqenhError, RuntimeError):
    """An external metric plugin crashed or returned garbage."""
