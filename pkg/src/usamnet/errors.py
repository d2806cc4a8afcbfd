"""Exception hierarchy shared by every module of the package."""


class UsamError(Exception):
    """Base class for all package errors."""


class ConfigurationError(UsamError, ValueError):
    """Shapes, channel counts or configuration values that do not fit together."""


class DegenerateBatchError(UsamError, ValueError):
    """Batch statistics requested over fewer than two elements."""


class UsageError(UsamError, ValueError):
    """An API called in a way its contract forbids."""


class DataError(UsamError, ValueError):
    """Input files or arrays that violate the data conventions."""


class NoValidPixelsError(UsamError, ValueError):
    """A metric or loss was asked to average over an empty set of valid pixels."""


class GenerationError(UsamError, RuntimeError):
    """Synthetic scene generation could not place a shape within its retry budget."""


class CheckpointFormatError(UsamError, ValueError):
    """A checkpoint file is truncated or malformed."""


class IncompatibleCheckpointError(UsamError, ValueError):
    """A checkpoint does not match the model configuration it is loaded into."""
