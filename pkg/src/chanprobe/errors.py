"""Exception hierarchy shared by all chanprobe modules."""


class ChanprobeError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(ChanprobeError, ValueError):
    pass


class ConfigError(ChanprobeError, ValueError):
    pass


class InsufficientData(ChanprobeError, ValueError):
    pass


class DegenerateInput(ChanprobeError, ValueError):
    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = list(indices) if indices is not None else []


class NumericFailure(ChanprobeError, ArithmeticError):
    pass


class NotPositiveSemidefinite(NumericFailure):
    pass


class IncompatibleFingerprints(ChanprobeError, ValueError):
    pass


class DecodeError(ChanprobeError, OSError):
    """Malformed binary file."""


class BadMagic(DecodeError):
    pass


class VersionMismatch(DecodeError):
    pass


class TruncatedBody(DecodeError):
    pass


class EmptyDimension(DecodeError):
    pass
