"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, validation
failures -> 3, ConvergenceError -> 4.
"""


class PrivLqrError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PrivLqrError, ValueError):
    """An argument violates a documented precondition (shape, sign, PD-ness)."""


class ConditioningError(PrivLqrError, ArithmeticError):
    """A matrix that must be factorized is numerically singular."""


class ConfigError(PrivLqrError, ValueError):
    """An experiment config file failed to parse or validate."""


class ConvergenceError(PrivLqrError, RuntimeError):
    """An iterative solver exhausted its iteration cap without converging."""
