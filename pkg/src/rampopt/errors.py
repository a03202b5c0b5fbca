"""Exception hierarchy shared by all modules."""


class RampoptError(Exception):
    """Base class for all package errors."""


class ValidationError(RampoptError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(RampoptError, RuntimeError):
    """A numerical routine failed (eigensolver, integrator, optimizer)."""


class DegeneracyError(NumericalError):
    """Ground state is not isolated."""


class IntegrationError(NumericalError):
    """Adaptive propagation could not meet its tolerances.

    Attributes
    ----------
    time : float
        Model time at which the integrator gave up.
    """

    def __init__(self, message, time=float("nan")):
        super().__init__(message)
        self.time = time


class BracketError(RampoptError):
    """A duration bracket does not contain a threshold crossing."""
