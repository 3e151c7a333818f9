"""Exception types shared across the package."""


class MotionForgeError(Exception):
    """Base class for all package errors."""


class DegenerateRotation(MotionForgeError):
    """6D rotation input with zero or parallel basis vectors."""


class ShapeMismatch(MotionForgeError):
    """Array or structure shapes inconsistent with the operation."""


class InvalidSegments(MotionForgeError):
    """Overlapping or out-of-range action segments."""


class InvalidSchedule(MotionForgeError):
    """Diffusion schedule parameters out of range."""


class NumericalError(MotionForgeError):
    """Non-finite value encountered during computation."""


class InvalidInput(MotionForgeError):
    """Semantically invalid argument."""


class InvalidState(MotionForgeError):
    """Operation called before required setup."""


class Unreachable(MotionForgeError):
    """No path exists between the requested grid locations."""


class UnsupportedOverlap(MotionForgeError):
    """More than two offset windows overlap on one joint."""


class OptimizationDiverged(MotionForgeError):
    """Iterative refinement failed to make progress."""
