"""Exception hierarchy shared across the package."""


class ReftiError(Exception):
    """Base class for all errors raised by refti."""


class InvalidArgumentError(ReftiError, ValueError):
    pass


class OutsideSupportError(ReftiError, ValueError):
    """A density was evaluated where it (or its partner) has zero mass."""


class InitializationError(ReftiError, RuntimeError):
    """No finite-density starting point could be found for a chain."""


class NonConcaveModeError(ReftiError, RuntimeError):
    """The Hessian at the located mode is not negative definite or not defined."""


class OptimizationError(ReftiError, RuntimeError):
    pass


class DegenerateCovarianceError(ReftiError, RuntimeError):
    pass


class InvalidReferenceError(ReftiError, ValueError):
    pass


class VariationalError(ReftiError, RuntimeError):
    pass


class EvidenceError(ReftiError, RuntimeError):
    """Every coupling-parameter run failed."""


class QuadratureError(ReftiError, RuntimeError):
    pass


class UnsupportedPriorError(ReftiError, ValueError):
    pass


class DataError(ReftiError, IOError):
    """Missing, malformed or inconsistent input data."""


class FetchError(DataError):
    pass


class MissingTraceError(ReftiError, ValueError):
    pass


class ComparisonError(ReftiError, ValueError):
    pass


class InvalidPairingError(InvalidArgumentError):
    """Two models cannot be connected by a direct path (different parameter spaces)."""
