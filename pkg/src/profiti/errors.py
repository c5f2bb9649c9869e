"""Exception hierarchy shared across the package."""


class ProfitiError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ProfitiError):
    """Operands have incompatible shapes."""


class DomainError(ProfitiError):
    """An input lies outside the mathematical domain of an operation."""


class DataFormatError(ProfitiError):
    """A data file violates the expected schema."""


class ValidationError(ProfitiError):
    """A domain object violates its invariants."""


class ConfigError(ProfitiError):
    """A configuration is inconsistent or out of range."""


class NumericError(ProfitiError):
    """A numeric routine failed (non-finite values, no convergence, singular system)."""
