"""
Exception hierarchy for the pageseg pipeline.

Every error carries the process exit code the CLI reports for it.
"""
from typing import Optional


class PagesegError(Exception):
    exit_code = 2


class ConfigurationError(PagesegError):
    """Invalid configuration, bad arguments or violated preconditions"""
    exit_code = 1


class DataError(PagesegError):
    exit_code = 2


class ImageFormatError(DataError):
    pass


class BoundsError(DataError):
    pass


class ShapeError(DataError):
    pass


class UndefinedStatisticError(DataError):
    """s1 / s2 requested on a patch without components or ink"""


class SamplingError(DataError):
    pass


class SamplingExhaustedError(SamplingError):
    def __init__(self, strategy: str, attempts: int, detail: Optional[str] = None):
        self.strategy = strategy
        self.attempts = attempts
        message = f"Sampling exhausted for strategy '{strategy}' after {attempts} rejections"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class CheckpointError(DataError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class DivergenceError(PagesegError):
    exit_code = 3

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch} (loss={loss})")
