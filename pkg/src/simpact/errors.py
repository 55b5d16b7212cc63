"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SimpactError(Exception):
    """Base class for all package errors."""


class ParseError(SimpactError):
    """A scene or action file could not be parsed."""


class ValidationError(SimpactError):
    """A parsed value violates an invariant. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateMesh(SimpactError):
    pass


class EmptyVolume(SimpactError):
    pass


class NumericalDivergence(SimpactError):
    """A simulator produced a non-finite or inverted state."""


class CFLViolation(SimpactError):
    pass


class TooFewParticles(SimpactError):
    pass


class WorkspaceViolation(SimpactError):
    def __init__(self, index: int, message: str):
        super().__init__(f"action {index}: {message}")
        self.index = index


class InvalidParameter(SimpactError):
    pass


class NoJsonFound(SimpactError):
    pass


class SchemaError(SimpactError):
    """One proposal failed schema validation; ``index`` is its position in the batch."""

    def __init__(self, index: int, message: str):
        super().__init__(f"proposal {index}: {message}")
        self.index = index


class BackendError(SimpactError):
    pass


class TransportError(BackendError):
    pass


class MalformedAfterRetries(BackendError):
    """The service kept returning unusable output. ``partial`` holds whatever was salvaged."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class FixtureMiss(TransportError):
    pass


class MissingCriterionParam(SimpactError):
    pass


class IoError(SimpactError):
    pass
