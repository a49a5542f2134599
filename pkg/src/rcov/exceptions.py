"""Exception types raised by the rcov estimation pipeline."""


class RcovError(Exception):
    """Base class for all rcov-specific errors."""


class DimensionError(RcovError, ValueError):
    """An array argument has an incompatible or non-square-compatible shape."""


class EmptyMassError(RcovError, ValueError):
    """A weight vector with zero total mass was passed where mass > 0 is required."""


class DegenerateInputError(RcovError, ValueError):
    """Numerical degeneracy: singular scale matrix, vanishing trace, or similar."""


class PruneFailure(RcovError, RuntimeError):
    """No candidate anchor captured a majority ball within the allotted rounds."""


class BudgetExceededError(RcovError, ValueError):
    """An exhaustive computation would exceed its documented combinatorial budget."""


class SpecError(RcovError, ValueError):
    """A configuration object carries invalid values (e.g. corruption rate >= 1/2)."""


class FileFormatError(RcovError, ValueError):
    """A dataset file is truncated, mis-sized, or carries the wrong magic."""
