"""Exception types raised across the package."""


class RedFWIError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RedFWIError, ValueError):
    """Invalid parameters or configuration values."""


class ContractError(RedFWIError, ValueError):
    """Inputs violate a function precondition (shapes, ranges)."""


class StabilityError(RedFWIError):
    """The explicit time-stepping scheme would be unstable (CFL violated)."""

    def __init__(self, message, courant=None, max_dt=None):
        super().__init__(message)
        self.courant = courant
        self.max_dt = max_dt


class NumericalInstabilityError(RedFWIError, FloatingPointError):
    """Non-finite values appeared while stepping the wave equation."""


class ResourceError(RedFWIError, MemoryError):
    """The requested computation exceeds the configured memory budget."""


class FormatError(RedFWIError, ValueError):
    """A file on disk does not follow the expected binary layout."""


class TrainingError(RedFWIError, RuntimeError):
    """Denoiser training produced a non-finite or diverging loss."""

    def __init__(self, message, losses=None):
        super().__init__(message)
        self.losses = losses


class OptimizationAborted(RedFWIError, RuntimeError):
    """Inversion stopped early; ``trace`` holds the iterations completed so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
