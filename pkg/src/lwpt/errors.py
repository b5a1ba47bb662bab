"""Exception types raised across the package."""


class LWPTError(Exception):
    """Base class for every error raised by lwpt."""


class ShapeError(LWPTError, ValueError):
    """Operand shapes are incompatible."""


class MaskError(LWPTError, ValueError):
    """A softmax mask leaves some row with no valid entry."""


class ParameterError(LWPTError, ValueError):
    """A numeric argument is out of its allowed range."""


class UsageError(LWPTError, RuntimeError):
    """An API was called in a state where it cannot run."""


class ConfigError(LWPTError, ValueError):
    """Inconsistent or invalid configuration."""


class ModeError(ConfigError):
    """Batch layout does not match what the encoder expects."""


class CorpusParseError(LWPTError, ValueError):
    """A record in a JSONL file could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class SkipInstance(LWPTError):
    """No positive candidate exists for a (document, label) pair."""
