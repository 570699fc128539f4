"""Exception hierarchy shared by all modules."""


class HeomError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(HeomError, ValueError):
    """Invalid parameters or configuration text."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line


class ResourceError(HeomError):
    """The requested hierarchy would not fit in the slot budget."""

    def __init__(self, message, predicted_slots):
        super().__init__(message)
        self.predicted_slots = predicted_slots


class ContractViolation(HeomError):
    """A caller broke a documented precondition (layout mismatch etc.)."""


class IntegrationError(HeomError):
    """The ODE integrator could not meet its tolerances."""

    def __init__(self, message, t_reached=None):
        super().__init__(message)
        self.t_reached = t_reached


class StiffnessError(IntegrationError):
    """Step size underflow."""


class NonConvergenceError(HeomError):
    """A steady state or a depth escalation did not converge."""

    def __init__(self, message, last_variation=None):
        super().__init__(message)
        self.last_variation = last_variation


class WindowError(HeomError):
    """A correlation series is too short for a reliable Fourier transform."""
