"""Exception hierarchy.

Three families map onto CLI exit codes: ``ConfigError`` (1), ``DataError`` (2)
and ``NumericalError`` (3). Parameter and argument problems are ``ValueError``
subclasses so callers can catch them the usual way.
"""


class ModelError(Exception):
    """Base class for all package errors."""


class ConfigError(ModelError):
    """Invalid run configuration."""


class DataError(ModelError):
    """Input data cannot be used."""


class MalformedRow(DataError):
    pass


class DuplicateKey(DataError):
    pass


class UnknownAgeBand(DataError):
    pass


class EmptyBand(DataError):
    pass


class MissingBand(DataError):
    pass


class MissingYear(DataError):
    pass


class InsufficientKnots(DataError):
    pass


class NonpositiveRate(DataError):
    pass


class NumericalError(ModelError):
    pass


class StepTooLarge(NumericalError):
    """Probability conservation drifted beyond tolerance."""


class InvalidParams(ModelError, ValueError):
    pass


class InvalidVariant(ModelError, ValueError):
    pass


class InvalidState(ModelError, ValueError):
    pass


class StateNotInModel(InvalidState):
    pass


class NegativeDuration(ModelError, ValueError):
    pass


class ZeroExposure(ModelError, ValueError):
    pass


class OutOfRange(ModelError, ValueError):
    pass


class InvalidContract(ModelError, ValueError):
    pass


class UnsupportedHealthState(InvalidContract):
    pass


class TermExceedsMaxAge(InvalidContract):
    pass
