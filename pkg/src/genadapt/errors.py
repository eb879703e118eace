"""Exception hierarchy shared by every layer of the package."""


class AdaptError(Exception):
    """Base class for all package errors."""


class ConfigError(AdaptError, ValueError):
    """Invalid configuration, strategy, or experiment setup."""


class DimensionError(AdaptError, ValueError):
    """Array shapes disagree with what a model was trained on."""


class MechanismError(AdaptError, ValueError):
    """An adaptive mechanism is unknown or cannot be applied to a state."""


class IoError(AdaptError, OSError):
    """A file could not be read or written."""


class ParseError(AdaptError, ValueError):
    """Malformed input row. ``line`` is the 1-based line number in the file."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
