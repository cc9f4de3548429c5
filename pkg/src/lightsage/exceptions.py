class LightSAGEError(Exception):
    """Base class for pipeline errors."""


class ConfigError(LightSAGEError, ValueError):
    pass


class LogFormatError(LightSAGEError, ValueError):
    pass


class EmptyGraphError(LightSAGEError):
    pass


class TrainingDivergedError(LightSAGEError, FloatingPointError):
    pass


class InsufficientDataError(LightSAGEError, ValueError):
    pass
