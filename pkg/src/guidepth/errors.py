"""Exception types shared across the package.

Five failure families, kept deliberately coarse: shape problems, bad
configuration values, API misuse (wrong tape, missing backward target),
numerical trouble during evaluation or training, and malformed files.
"""


class DimensionError(ValueError):
    """A tensor or array has the wrong rank or incompatible shape."""


class ConfigurationError(ValueError):
    """A configuration value is out of range or inconsistent."""


class UsageError(RuntimeError):
    """The API was called in an unsupported way (tape mixing, bad scope)."""


class EvaluationError(ValueError):
    """Numerical preconditions violated at evaluation time."""


class FormatError(ValueError):
    """A file does not match its declared on-disk format.

    Carries the byte offset at which decoding failed so the message can
    point at the exact spot in the file.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
        self.offset = offset


class CheckpointError(UsageError):
    """Checkpoint manifest does not match the model being loaded."""
