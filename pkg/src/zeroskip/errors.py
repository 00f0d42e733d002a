"""Shared exception types."""


class ShapeError(ValueError):
    """Structural mismatch: vector lengths, tensor shapes, or layer chaining."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (thresholds, hardware parameters, capacities)."""


class DegenerateFitError(ValueError):
    """Least-squares fit attempted on a series with zero variance."""


class SchedulingError(RuntimeError):
    """Prediction consulted before its proxy was evaluated."""


class ContainerFormatError(ValueError):
    """Malformed model container; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
