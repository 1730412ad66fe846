"""Exception types shared across the package."""


class LevyAreaError(Exception):
    """Base class for all package errors."""


class StructureError(LevyAreaError):
    """A matrix fails a required structural identity (involution, symmetry, skewness)."""


class RankDeficientError(LevyAreaError):
    """An input matrix does not have the required rank."""


class NearIdentityBoundError(LevyAreaError):
    """A factorization exists but the near-identity closeness precondition fails.

    Reported as a distinct condition so callers can tell "too far apart"
    from "rank deficient".
    """


class RankCollapseError(LevyAreaError):
    """Generator functions became linearly dependent on the calibration data."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"rank collapse at generator index {index}")


class SymmetryError(LevyAreaError):
    """A declared symmetry fails on sampled data."""

    def __init__(self, message, worst_point=None, residual=None):
        self.worst_point = worst_point
        self.residual = residual
        super().__init__(message)


class BlowUpError(LevyAreaError):
    """Integration produced a non-finite state."""

    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"non-finite state at time {time:g}")


class ConfigError(LevyAreaError):
    """Invalid experiment configuration."""
