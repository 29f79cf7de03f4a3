"""Effective viscosity of rigid-sphere suspensions via periodic Stokes correctors."""

__version__ = "0.1.0"

from .errors import (
    CampaignError,
    ConvergenceError,
    OverlapError,
    QuadratureError,
    RenormalizationError,
    SaturationError,
    SuspviscError,
    ValidationError,
)

__all__ = [
    "CampaignError",
    "ConvergenceError",
    "OverlapError",
    "QuadratureError",
    "RenormalizationError",
    "SaturationError",
    "SuspviscError",
    "ValidationError",
]
