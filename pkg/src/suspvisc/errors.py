"""Exception types shared across the package."""


class SuspviscError(Exception):
    """Base class for all package errors."""


class ValidationError(SuspviscError):
    """Invalid input: bad parameters, overlapping particles, malformed files."""


class OverlapError(ValidationError):
    """Particle configuration violates the hardcore gap constraint."""


class SaturationError(ValidationError):
    """Requested volume fraction is not reachable by the chosen point process."""


class ConvergenceError(SuspviscError):
    """An iterative solve failed to reach the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CampaignError(SuspviscError):
    """Too many individual solves failed for the campaign result to be trusted."""


class RenormalizationError(SuspviscError):
    """Pair statistics are incompatible with the renormalized pair integral."""


class QuadratureError(SuspviscError):
    """A truncated integral is dominated by its unresolved tail."""
