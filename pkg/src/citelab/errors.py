"""Exception hierarchy for citelab."""


class CitelabError(Exception):
    """Base class for all library errors."""


class DomainError(CitelabError, ValueError):
    """An argument lies outside the domain of a model quantity."""


class KernelParameterError(CitelabError, ValueError):
    """Invalid aging-kernel parameters."""


class HistoryValidationError(CitelabError, ValueError):
    """A citation history violates its ordering or timing constraints."""


class HistoryFormatError(CitelabError, ValueError):
    """A history file could not be parsed."""


class IntegrationError(CitelabError, RuntimeError):
    """The adaptive integrator could not reach the requested end time."""


class InversionError(CitelabError, RuntimeError):
    """Numerical inversion of a kernel CDF missed its tolerance."""


class SampleSizeError(CitelabError, ValueError):
    """Too few samples for a requested statistical test."""
