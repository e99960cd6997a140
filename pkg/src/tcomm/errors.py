"""Exception hierarchy shared across the package."""


class TcommError(Exception):
    """Base class for every error raised by tcomm."""


class ShapeError(TcommError, ValueError):
    pass


class NumericError(TcommError, ArithmeticError):
    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class StateError(TcommError, RuntimeError):
    pass


class DomainError(TcommError, ValueError):
    pass


class ConfigError(TcommError, ValueError):
    pass


class TrainingDiverged(NumericError):
    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


# file format errors
class FormatError(TcommError, ValueError):
    pass


class VersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class CorruptHeaderError(FormatError):
    pass
