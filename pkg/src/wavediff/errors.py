"""Exception and warning types shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration or command arguments."""


class FormatError(ValueError):
    """Malformed binary artifact (checkpoint, tensor cache, WAV)."""


class NumericError(ArithmeticError):
    """Non-finite values encountered during training or sampling."""


class ScheduleAlignmentWarning(UserWarning):
    """A requested noise level falls outside the training schedule's range."""
