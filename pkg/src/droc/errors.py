"""Exception and warning types shared across the package."""


class DrocError(Exception):
    """Base class for all package errors."""


class DimensionError(DrocError):
    """An array argument has an incompatible shape."""


class NumericalFault(DrocError):
    """A computation produced a non-finite result."""


class SingularLinearization(DrocError):
    """Linearization requested at a dynamics singularity (e.g. |steering| >= pi/2)."""


class RiskInfeasible(DrocError):
    """The risk-sensitivity parameter lies outside the feasible set.

    Raised when W_t^{-1} - theta * S_{t+1} loses positive definiteness at
    some backward step, i.e. the entropic risk of the quadratic value
    function diverges.
    """


class SingularH(DrocError):
    """The control Hessian surrogate is not positive definite even after
    Levenberg regularization."""


class TooFewSamples(DrocError):
    """Not enough samples to estimate distribution parameters."""


class IllConditionedKernel(DrocError):
    """GP kernel matrix stayed non-positive-definite through jitter escalation."""


class WindowTooLarge(DrocError):
    """Receding-horizon window length does not fit in the training sequence."""


class DegenerateDistanceWarning(UserWarning):
    """Duplicate sample points produced a zero nearest-neighbor distance;
    the distance floor was applied."""
