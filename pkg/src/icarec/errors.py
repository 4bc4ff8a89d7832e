"""Exception types shared across the package."""


class IcarecError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(IcarecError):
    """Operand shapes invalid for an operation."""


class NonFiniteError(IcarecError):
    """A NaN or Inf appeared where only finite values are admitted."""


class GraphError(IcarecError):
    """Structural problem in an autodiff graph (cycle, non-scalar root...)."""


class SpecError(IcarecError):
    """Invalid network or mixing specification."""


class DegenerateBatchError(IcarecError):
    """A batch statistic fell below its floor (zero variance / norm)."""


class CheckpointError(IcarecError):
    """Checkpoint file malformed or inconsistent with its spec."""


class ConfigError(IcarecError):
    """Experiment configuration invalid (schema violation, bad value)."""


class DivergenceError(IcarecError):
    """Training or filtering produced non-finite state."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
