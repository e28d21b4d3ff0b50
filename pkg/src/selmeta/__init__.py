"""Bayesian meta-analysis models for publication bias and p-hacking."""

__version__ = "0.1.0"

from .densities import CutoffGrid, ModelSpec, ParamState, Study  # noqa: E402
from .stats_core import (  # noqa: E402
    DomainError,
    PathologicalSelectionError,
    Rng,
    SingularRegionError,
)

__all__ = [
    "CutoffGrid",
    "DomainError",
    "ModelSpec",
    "ParamState",
    "PathologicalSelectionError",
    "Rng",
    "SingularRegionError",
    "Study",
    "__version__",
]
