"""Exception types raised across the package."""


class EnergyscapeError(Exception):
    """Base class for all package errors."""


class ConstantColumn(EnergyscapeError, ValueError):
    pass


class DimensionMismatch(EnergyscapeError, ValueError):
    pass


class NotPositiveDefinite(EnergyscapeError, ValueError):
    pass


class SingularCovariance(EnergyscapeError, ValueError):
    pass


class DegenerateScale(EnergyscapeError, ValueError):
    pass


class TooManyVariables(EnergyscapeError, ValueError):
    pass


class TooShort(EnergyscapeError, ValueError):
    pass


class TooFewSamples(EnergyscapeError, ValueError):
    pass


class DegenerateComponent(EnergyscapeError, RuntimeError):
    pass


class NonFinite(EnergyscapeError, FloatingPointError):
    pass


class UnstableStep(EnergyscapeError, ValueError):
    pass


class SingleState(EnergyscapeError, ValueError):
    pass


class EmptyBasin(EnergyscapeError, ValueError):
    pass


class ConfigError(EnergyscapeError, ValueError):
    """Bad or unknown configuration entries."""


class NotConvergedWarning(RuntimeWarning):
    """An iterative fit hit its iteration limit; the best iterate is returned."""
