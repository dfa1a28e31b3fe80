"""Exception types shared across the package.

The CLI maps these onto stable exit codes: configuration/data/input errors
exit 2, IO errors exit 3, numeric failures exit 4.
"""


class CirError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CirError, ValueError):
    """Invalid configuration value or combination."""


class ShapeError(CirError, ValueError):
    """Array arguments have inconsistent shapes."""


class DataError(CirError, ValueError):
    """A dataset or split cannot support the requested operation."""


class InputError(CirError, ValueError):
    """A numeric input violates its contract (e.g. a non-distribution target)."""


class NumericError(CirError, ArithmeticError):
    """Non-finite values where finite ones are required."""
