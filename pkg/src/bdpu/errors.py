"""Exception types raised across the package."""


class BDPUError(Exception):
    """Base class for all package errors."""


class ParameterError(BDPUError, ValueError):
    """Chain or law parameters outside their admissible domain."""


class InadmissibleMove(BDPUError, ValueError):
    """A move requires a block count that is zero in the current state."""


class StateExceedsCapacity(BDPUError, ValueError):
    """A state has an occupied block size beyond the maximal allelic count L."""


class RegimeError(BDPUError, ValueError):
    """A law was requested outside the beta regime where it exists."""


class SingularSystem(BDPUError, ArithmeticError):
    """The tridiagonal system could not be eliminated (zero pivot)."""


class InsufficientSample(BDPUError, ValueError):
    """Too few cells survive merging for a goodness-of-fit statistic."""
