"""Exception types shared across the package."""


class CscsegError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CscsegError):
    """Raised when tensor shapes violate an operation's contract."""


class DataError(CscsegError):
    """Raised on invalid dataset contents (bad labels, missing files)."""


class ConfigError(CscsegError):
    """Raised on invalid configuration values or flags."""


class FormatError(CscsegError):
    """Raised on malformed binary files; carries the byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UsageError(CscsegError):
    """Raised on API misuse, e.g. backward before any forward."""


class TrainingDiverged(CscsegError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
