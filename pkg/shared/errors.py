"""Exception hierarchy shared by every package.

Library code raises these; only the CLI translates them into exit codes.
"""

from typing import Optional, Sequence


class ActGenError(Exception):
    """Base class for all errors raised by this project."""


class ShapeError(ActGenError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, a: Sequence[int], b: Optional[Sequence[int]] = None, detail: str = ""):
        self.op = op
        self.shapes = (tuple(a), tuple(b) if b is not None else None)
        msg = f"{op}: shape mismatch {tuple(a)}"
        if b is not None:
            msg += f" vs {tuple(b)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(ActGenError):
    """A NaN or Inf appeared where only finite values are allowed."""


class TapeError(ActGenError):
    """Invalid use of the gradient tape."""


class ScheduleError(ActGenError):
    """Invalid noise schedule parameters or timestep."""


class ConfigError(ActGenError):
    """Invalid configuration; `key` names the offending dotted key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class CheckpointError(ActGenError):
    """Checkpoint missing, malformed or incompatible."""


class DatasetFormatError(ActGenError):
    """Dataset file cannot be decoded."""


class DatasetVersionError(DatasetFormatError):
    pass


class DatasetTruncatedError(DatasetFormatError):
    pass


class DatasetChecksumError(DatasetFormatError):
    pass


class DataSpecError(ActGenError):
    """Dataset spec cannot be rendered (e.g. shapes leave the frame)."""


class ImageFormatError(ActGenError):
    """Image dump not possible for the given tensor."""


class GuidanceError(ActGenError):
    """Invalid guidance input (gamma range, mask mode, hook output...)."""


class UsageError(ActGenError):
    """Bad command-line usage."""
