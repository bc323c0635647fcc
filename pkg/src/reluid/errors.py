"""Exception types raised across the package."""


class ReluIdError(Exception):
    """Base class for all package errors."""


class ShapeError(ReluIdError, ValueError):
    """An array or vector does not match the declared architecture."""


class PathExplosionError(ReluIdError):
    """Materialising the path set would exceed the configured cap."""


class DegenerateParamsError(ReluIdError):
    """The parameters lie in the degenerate set S where an operation is undefined."""


class StepTooLargeError(ReluIdError):
    """A finite-difference probe crossed an activation boundary."""


class PreconditionError(ReluIdError):
    """An operation was called outside the regime it is defined for."""


class NoWitnessFound(ReluIdError):
    """The continuation solver did not produce a twin parameter (inconclusive)."""


class FormatError(ReluIdError):
    """A model or sample document is malformed."""
