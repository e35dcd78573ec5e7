# errors.py
"""Exception hierarchy shared by every module.

Library code raises these; only cli.py turns them into exit codes.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class CbnnError(Exception):
    """Base class. `exit_code` is what the CLI returns for this failure."""

    exit_code = EXIT_USAGE


class ConfigError(CbnnError):
    """Malformed configuration, unknown keys or bad command-line values."""

    exit_code = EXIT_USAGE


class DataError(CbnnError, ValueError):
    exit_code = EXIT_DATA


class RangeError(DataError):
    """A value or slice index outside its allowed range."""


class ShapeError(DataError):
    """Dimension mismatch, missing parameters or an unsupported layout."""


class DataFormatError(DataError):
    """Truncated or corrupt file. `byte_offset` points at the bad record."""

    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class CheckpointError(DataFormatError):
    pass


class NumericError(CbnnError, ArithmeticError):
    exit_code = EXIT_NUMERIC


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, step, loss):
        super().__init__(f"loss diverged to {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss
