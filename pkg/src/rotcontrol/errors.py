class RotControlError(Exception):
    pass


class ConfigurationError(RotControlError, ValueError):
    """Invalid configuration: bad grid sizes, unknown keys, inconsistent shapes."""


class PropagationError(RotControlError, FloatingPointError):
    pass


class OptimizationError(RotControlError, RuntimeError):
    pass


class SweepAborted(OptimizationError):
    """Raised mid-run; ``partial`` holds the result up to the last completed iteration."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
