"""Exception hierarchy shared by every module."""

from __future__ import annotations


class PulseForgeError(Exception):
    """Base class for all package errors."""


class ValidationError(PulseForgeError, ValueError):
    """Malformed input: bad shape, non-Hermitian matrix, missing field."""


class CapacityError(PulseForgeError):
    """A dense object would exceed the configured maximum dimension."""


class TopologyError(ValidationError):
    """A two-qubit operation was requested on a pair that is not a device edge."""


class BoundsError(ValidationError):
    """A parameter value lies outside its declared bounds."""

    def __init__(self, message: str, name: str | None = None):
        super().__init__(message)
        self.name = name


class BindingError(PulseForgeError):
    """A schedule still contains unresolved parameter references."""


class LoweringError(PulseForgeError):
    """A gate cannot be lowered to pulses."""


class ParseError(ValidationError):
    """A text input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class TomographyError(PulseForgeError):
    """The Hamiltonian tomography fit did not reach its residual tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class EvaluationError(PulseForgeError):
    """The objective returned a non-finite value."""


class GrowthExhausted(PulseForgeError):
    """The growth policy has no further layers to append."""
