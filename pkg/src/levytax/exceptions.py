"""Exception types raised by levytax."""


class LevyTaxError(Exception):
    """Base class for all package errors."""


class DomainError(LevyTaxError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class NonConvergence(LevyTaxError, ArithmeticError):
    """An iterative numerical routine hit its iteration cap."""


class RootFindingFailure(LevyTaxError, ArithmeticError):
    """Polynomial roots could not be resolved to the required accuracy."""
