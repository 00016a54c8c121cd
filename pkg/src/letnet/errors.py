"""Exception hierarchy shared by all letnet modules."""


class LetnetError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimensionError(LetnetError, ValueError):
    pass


class DomainError(LetnetError, ValueError):
    pass


class DegenerateSignalError(LetnetError, ValueError):
    pass


class DatasetFormatError(LetnetError, ValueError):
    """Wrong magic bytes or unsupported version in a binary file."""


class DatasetCorruptError(LetnetError, ValueError):
    """Payload shorter or longer than its header promises."""


class FitFailureError(LetnetError, RuntimeError):
    pass


class NotAttainedError(LetnetError, ValueError):
    """The requested value lies outside the range of the activation."""


class ShapeError(LetnetError, ValueError):
    pass


class ConsistencyError(LetnetError, ValueError):
    """A trace, gradient bundle and parameter set do not belong together."""


class ConfigError(LetnetError, ValueError):
    pass


class AbortEpoch(LetnetError, FloatingPointError):
    """Raised inside CG when the quadratic model stops being finite."""


class TrainingError(LetnetError, RuntimeError):
    pass
