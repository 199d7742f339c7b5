"""Exception types shared across the package.

The CLI maps these onto exit codes: ``InputError`` -> 2,
``UndefinedMetricError`` -> 3, ``NumericalError`` -> 4.
"""


class InputError(ValueError):
    """Malformed or inconsistent input (files, shapes, ids, configs)."""


class UndefinedMetricError(ArithmeticError):
    """A metric has no defined value for the given input."""


class NumericalError(ArithmeticError):
    """Training produced a non-finite value."""
