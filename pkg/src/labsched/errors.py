"""Exception hierarchy shared across the package."""


class LabSchedError(Exception):
    """Base class for all errors raised by labsched."""


class DimensionError(LabSchedError, ValueError):
    """Array shapes do not conform."""


class StateError(LabSchedError, RuntimeError):
    """An object was used out of order (e.g. backward before forward)."""


class NumericError(LabSchedError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class ConfigError(LabSchedError, ValueError):
    """Invalid configuration or hyperparameter."""


class DataError(LabSchedError, ValueError):
    """Input data violates a documented contract."""


class ContractError(LabSchedError, ValueError):
    """A precondition of an operation was violated by the caller."""


class GenerationError(LabSchedError, RuntimeError):
    """Synthetic cohort generation could not satisfy its calibration target."""


class TrainingError(LabSchedError, RuntimeError):
    """Model training failed (degenerate data or diverging loss)."""
