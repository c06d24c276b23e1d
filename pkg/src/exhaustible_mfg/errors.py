"""Exception hierarchy for the solver and simulation layers."""


class MfgError(Exception):
    """Base class for every error raised by this package."""


class ModelValidationError(MfgError, ValueError):
    """Raised when model inputs violate a standing assumption.

    ``violations`` holds every problem found, not only the first, so callers
    can report the full list at once.
    """

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations) if violations else [message]


class InvalidTerminalPayoff(ModelValidationError):
    pass


class InvalidInitialMeasure(ModelValidationError):
    pass


class InvalidGrid(ModelValidationError):
    pass


class GridMismatch(MfgError, ValueError):
    pass


class NoConvergence(MfgError, RuntimeError):
    """The market-price fixed point did not reach tolerance."""


class NewtonDivergence(MfgError, RuntimeError):
    """The inner nonlinear sweeps of an HJB step did not settle."""


class OuterNoConvergence(MfgError, RuntimeError):
    """The damped outer loop hit its iteration cap.

    The partially converged solution is attached as ``solution``.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class TruncationFailure(MfgError, RuntimeError):
    pass
