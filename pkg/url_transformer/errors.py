"""
Exception hierarchy shared by every url_transformer module.
"""


class UrlTransformerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(UrlTransformerError, ValueError):
    """Tensor shapes do not agree for the requested operation."""


class ParameterError(UrlTransformerError, ValueError):
    """A numeric argument is outside its allowed range."""


class UsageError(UrlTransformerError, ValueError):
    """An API was called with arguments that violate its contract."""


class DataError(UrlTransformerError):
    """Input records or token ids are invalid or insufficient."""


class FormatError(UrlTransformerError):
    """A file does not follow the expected layout."""


class ConfigError(UrlTransformerError):
    """A run configuration or hyperparameter set is invalid."""


class CorruptionError(UrlTransformerError):
    """A checkpoint's integrity digest does not match its contents."""


class TrainingDivergence(UrlTransformerError):
    """Training produced a non-finite loss."""


class TruncatedCheckpointError(CorruptionError, OSError):
    """A checkpoint file ended before all declared sections were read."""
