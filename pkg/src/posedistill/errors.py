"""Exception types shared across the package.

CLI exit codes: ConfigError -> 2, DataError -> 3, DivergenceError -> 4.
"""


class PoseDistillError(Exception):
    """Base class for all package errors."""


class ShapeError(PoseDistillError):
    """Operand shapes are incompatible for an operation."""


class ConfigError(PoseDistillError):
    """Invalid or inconsistent configuration."""


class DataError(PoseDistillError):
    """Malformed dataset, cache, or pose file."""


class DivergenceError(PoseDistillError):
    """Training produced non-finite values."""

    def __init__(self, message, *, stage=None, epoch=None, seed=None):
        context = ", ".join(
            f"{k}={v}" for k, v in (("stage", stage), ("epoch", epoch), ("seed", seed))
            if v is not None
        )
        if context:
            message = f"{message} ({context})"
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch
        self.seed = seed
