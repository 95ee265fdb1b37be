"""Exception types shared across the package."""


class CLH3GError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CLH3GError, ValueError):
    pass


class NumericError(CLH3GError, ArithmeticError):
    pass


class ContractError(CLH3GError, ValueError):
    """An operation was called outside its documented preconditions."""


class ConfigError(CLH3GError, ValueError):
    """A configuration value is invalid. The message names the field."""


class CorpusError(CLH3GError, ValueError):
    pass


class TrainingError(CLH3GError, RuntimeError):
    pass
