"""Exception hierarchy shared by all modules."""


class UltrarateError(Exception):
    """Base class for every error raised by the package."""


class DomainError(UltrarateError, ValueError):
    """An input violates a documented invariant; the message names it."""


class AliasingError(DomainError):
    """Quadrature grid too coarse for the requested spectral operation."""


class RateUnderflowError(UltrarateError, ArithmeticError):
    """A rate bound is too small to represent in double precision."""


class NumericalError(UltrarateError, RuntimeError):
    """A simulation step failed (solver divergence, coupling blow-up)."""


class SolverError(NumericalError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ZetaCapError(NumericalError):
    pass


class EmptyWindowError(UltrarateError):
    """No time window where the decay signal exceeds its noise floor."""
