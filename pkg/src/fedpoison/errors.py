"""Exception types shared across the simulator."""


class InputError(ValueError):
    """An argument violates a documented precondition."""


class FormatError(ValueError):
    """A file does not match its declared binary or text format.

    Carries the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Local optimization diverged (non-finite loss or gradient)."""


class ConfigError(ValueError):
    """An experiment config is malformed or fails validation."""
