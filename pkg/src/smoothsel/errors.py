"""Exception hierarchy shared by every module."""


class SmoothselError(Exception):
    """Base class for all library errors."""


class DomainError(SmoothselError, ValueError):
    """A point is not part of the domain, or the domain is empty."""


class SizeError(SmoothselError):
    """The domain is too large for exhaustive enumeration."""


class PreconditionError(SmoothselError, ValueError):
    """A smoothing parameter exceeds the ceiling its bound is valid for."""

    def __init__(self, message, ceiling=None):
        super().__init__(message)
        self.ceiling = ceiling


class ConfigurationError(SmoothselError, ValueError):
    """Invalid threshold or experiment configuration."""


class ParameterError(SmoothselError, ValueError):
    """A numeric parameter is outside its admissible range."""


class BudgetError(SmoothselError, ValueError):
    """A (k, l) split does not meet the target privacy level."""


class ScoreFileError(SmoothselError, ValueError):
    """Malformed score file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
