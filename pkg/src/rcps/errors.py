"""Exception hierarchy shared by every module of the package."""


class GamError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class DomainError(GamError, ValueError):
    """An argument lies outside the domain where an operation is defined."""

    exit_code = 2


class ConfigurationError(GamError, ValueError):
    """Inconsistent or unsupported model configuration."""

    exit_code = 2


class DataError(GamError, ValueError):
    """Malformed input data (missing values, bad response support, schema)."""

    exit_code = 3


class ConvergenceError(GamError, RuntimeError):
    """Iterative fitting failed to converge.

    Attributes
    ----------
    coef : numpy.ndarray or None
        Last iterate reached before giving up.
    grad_norm : float
        Max-norm of the gradient at ``coef``.
    """

    exit_code = 4

    def __init__(self, message, coef=None, grad_norm=float("nan")):
        super().__init__(message)
        self.coef = coef
        self.grad_norm = grad_norm


class NumericalError(GamError, ArithmeticError):
    """A numerical failure: non-finite values, singular or indefinite systems."""

    exit_code = 5

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
