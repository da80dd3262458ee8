"""Exception hierarchy shared across the package."""


class PoinHierError(Exception):
    """Base class for all package errors."""


class InvalidInput(PoinHierError, ValueError):
    pass


class NumericalInstability(PoinHierError, ArithmeticError):
    pass


class ZeroDistanceGradient(PoinHierError, ArithmeticError):
    """Raised when the distance gradient is requested at coincident points."""


class InvalidDataset(PoinHierError, ValueError):
    pass


class InvalidBatch(PoinHierError, ValueError):
    pass


class ConfigError(PoinHierError, ValueError):
    pass


class FormatError(PoinHierError, ValueError):
    """Malformed or truncated binary file."""


class UnsupportedVersion(FormatError):
    pass


class UnsupportedDimension(PoinHierError, ValueError):
    pass


class DivergedError(PoinHierError, RuntimeError):
    """Training produced a non-finite loss.

    ``last_good`` holds the parameters from before the failing step and
    ``log`` the metrics recorded up to that point.
    """

    def __init__(self, message, last_good=None, log=None):
        super().__init__(message)
        self.last_good = last_good
        self.log = log or []
