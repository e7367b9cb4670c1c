"""
Exception hierarchy for the FA-Mamba toolkit.

Every error carries the process exit code the command line reports for it.
"""

from typing import Optional


class FAMambaError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


class DimensionError(FAMambaError, ValueError):
    """A tensor or image extent violates an operation's shape contract."""

    exit_code = 2


class ConfigError(FAMambaError):
    """A run file, flag override or model configuration is invalid."""

    exit_code = 2


class ImageIOError(FAMambaError):
    """An image, manifest or output path cannot be read or written."""

    exit_code = 3


class NumericError(FAMambaError):
    """A primitive produced NaN/Inf, or a numeric precondition failed."""

    exit_code = 4


class TapeError(FAMambaError):
    """The differentiation tape cannot be traversed (non-scalar loss, cycle)."""

    exit_code = 4


class TrainingError(NumericError):
    """Training hit a non-finite loss."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class CheckpointError(FAMambaError):
    """A checkpoint file is malformed or does not match the model."""

    exit_code = 4


class ChecksumError(CheckpointError):
    """The trailing checksum does not match the file contents."""


class ParameterMismatchError(CheckpointError):
    """Parameter names or shapes disagree between file and model."""

    def __init__(self, message: str, parameter: Optional[str] = None):
        super().__init__(message)
        self.parameter = parameter


class AcceptanceError(FAMambaError):
    """A measured quantity missed its acceptance threshold."""

    exit_code = 5
