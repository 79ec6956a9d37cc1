"""Exception types shared across the package."""


class CalibrationError(Exception):
    """Base class for all mfcal errors."""


class BoundsError(CalibrationError):
    """Invalid scaling bounds (min >= max, wrong shape, ...)."""


class OutOfRangeError(CalibrationError):
    """A raw input value falls outside its declared bounds."""


class DegenerateDataError(CalibrationError):
    """Responses carry no spread, so standardization is undefined."""


class DimensionError(CalibrationError):
    """Vector or matrix shapes do not line up with the declared sizes."""


class NumericalSingularityError(CalibrationError):
    """Covariance factorization failed even after jitter escalation."""


class InvalidInitError(CalibrationError):
    """Chain initialization has zero posterior density."""


class ConfigError(CalibrationError):
    """Run configuration violates the published schema."""
