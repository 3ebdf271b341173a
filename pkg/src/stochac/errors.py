"""Exception hierarchy shared across the package."""


class StochacError(Exception):
    """Base class for every error raised by stochac."""


class DomainError(StochacError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(StochacError, ArithmeticError):
    """Non-finite values appeared during a computation.

    ``step`` carries the failing time-step index when the error comes from
    a time integrator.
    """

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class InvariantViolation(StochacError, AssertionError):
    """A checked inequality or identity failed beyond its tolerance."""


class UsageError(StochacError, ValueError):
    """Inputs are valid individually but unusable for the requested study."""


class EstimationError(StochacError, ValueError):
    """A statistical estimator cannot produce a meaningful value."""
