"""Exception types raised across the toolkit."""


class MetaIoTError(Exception):
    """Base class for all toolkit errors."""


class ArgumentError(MetaIoTError, ValueError):
    pass


class DomainError(MetaIoTError, ValueError):
    """A value lies outside the domain a model is defined on."""


class CalibrationError(MetaIoTError):
    pass


class SingularityError(MetaIoTError, ValueError):
    pass


class AccuracyError(MetaIoTError, ValueError):
    """The requested evaluation cannot meet its accuracy guarantee."""


class ConditioningError(MetaIoTError):
    pass


class ShapeError(MetaIoTError, ValueError):
    pass


class TrainingError(MetaIoTError):
    pass


class DataError(MetaIoTError):
    pass


class BaselineError(MetaIoTError):
    pass


class ConfigError(MetaIoTError):
    pass


class CompatibilityError(MetaIoTError):
    pass
