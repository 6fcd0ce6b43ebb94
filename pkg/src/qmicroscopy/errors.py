"""Exception types raised across the toolkit."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularPointError(ArithmeticError):
    """The Fisher information vanishes or is undefined at the requested phase."""


class CalibrationError(RuntimeError):
    """The calibration fit could not be performed."""


class MonotonicityError(ValueError):
    """The fitted curve is not strictly monotone on the requested interval."""


class DegeneratePosteriorError(RuntimeError):
    """The likelihood is flat over the prior interval."""


class ConfigurationError(ValueError):
    """A scan configuration is inconsistent with the curve or the phase field."""


class BootstrapError(RuntimeError):
    """The phase-locked scan could not obtain a usable pilot estimate."""
