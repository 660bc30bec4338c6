"""Exception hierarchy shared by every module."""


class TamformerError(Exception):
    """Base class for all package errors."""


class ContractError(TamformerError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class RangeError(ContractError):
    """A requested value lies outside the valid range."""


class ParseError(TamformerError):
    """A file could not be parsed; carries the offending line when known."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class VersionError(ParseError):
    """A file declares a format version this code does not read."""


class TrainingDivergedError(TamformerError):
    def __init__(self, epoch, stage):
        self.epoch = epoch
        self.stage = stage
        super().__init__(f"total loss became NaN at stage {stage}, epoch {epoch}")
