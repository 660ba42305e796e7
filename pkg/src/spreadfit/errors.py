"""Exception types raised across the package."""


class SpreadFitError(Exception):
    """Base class for all package errors."""


class IntegrationError(SpreadFitError):
    """A forward solve produced a non-finite state."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class DomainError(SpreadFitError, ValueError):
    """A parameter or argument lies outside its admissible range."""


class SingularityError(DomainError):
    """The Holling denominator 1 + hS vanished."""


class FitError(SpreadFitError):
    """Every optimizer start failed."""


class NonIdentifiabilityError(SpreadFitError):
    """The normal matrix of the sensitivity system is singular or ill-conditioned."""

    def __init__(self, message: str, direction=None):
        super().__init__(message)
        self.direction = direction


class ParseError(SpreadFitError, ValueError):
    """Malformed input data or configuration."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
