"""
Exceptions raised across the segmentation framework.
"""
from typing import Iterable, Optional


class ShapeMismatchError(ValueError):
    """Tensor shape does not match what a network or operation expects."""


class ClassIndexError(ValueError):
    """A label mask holds a class index outside [0, num_classes)."""


class ArchitectureMismatchError(ValueError):
    """Two networks that must share an architecture do not."""


class EmptyInputError(ValueError):
    """An operation received an empty dataset or batch."""


class UndefinedMetricError(ValueError):
    """A metric cannot be computed from the accumulated data."""


class IncompatibleCheckpointError(ValueError):
    """A checkpoint does not belong to the configuration trying to load it."""


class ConfigError(ValueError):
    """Invalid configuration key or value."""

    def __init__(self, message: str, valid_keys: Optional[Iterable[str]] = None):
        if valid_keys is not None:
            message = f"{message}. Valid keys: {', '.join(sorted(valid_keys))}"
        super().__init__(message)


class NonFiniteLossError(RuntimeError):
    """A loss term became NaN or infinite during training."""

    def __init__(self, term: str, iteration: int, value: float):
        self.term = term
        self.iteration = iteration
        self.value = value
        super().__init__(f"Loss term '{term}' is {value} at iteration {iteration}")
