"""Exception types shared across the package."""


class IadmmError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(IadmmError):
    """Dimension or shape mismatch between vectors, operators, or problems."""


class ConfigError(IadmmError):
    """Invalid parameter value or unusable configuration."""


class CertificationError(IadmmError):
    """A candidate reference pair failed its optimality gate.

    Carries the measured KKT error in ``measured``.
    """

    def __init__(self, message, measured=None):
        super().__init__(message)
        self.measured = measured


class NumericError(IadmmError):
    """Numerical failure (iteration cap, non-finite values, stalled estimate).

    ``context`` holds structured information about where the failure
    happened (for the solver: outer iteration, block index, inner
    iteration).  ``best`` carries the best estimate available when an
    iterative routine hit its cap.
    """

    def __init__(self, message, context=None, best=None):
        super().__init__(message)
        self.context = dict(context) if context else {}
        self.best = best
