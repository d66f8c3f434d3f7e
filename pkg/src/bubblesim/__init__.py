"""Single-bubble barotropic compressible viscous flow simulator."""

from .driver import AbortCause, RunConfig, RunResult, SweepSpec, compute_constants, run, sweep
from .errors import (
    BubbleSimError,
    CollapseError,
    DegenerateIndicatorError,
    DomainError,
    RadiusGuardError,
    SolverError,
)
from .geometry import BubbleState
from .grid import BoxDomain, ScalarField, VectorField
from .modes import ModeVector
from .params import SimulationParams, validate_params

__all__ = [
    "AbortCause",
    "BoxDomain",
    "BubbleSimError",
    "BubbleState",
    "CollapseError",
    "DegenerateIndicatorError",
    "DomainError",
    "ModeVector",
    "RadiusGuardError",
    "RunConfig",
    "RunResult",
    "ScalarField",
    "SimulationParams",
    "SolverError",
    "SweepSpec",
    "VectorField",
    "compute_constants",
    "run",
    "sweep",
    "validate_params",
]

__version__ = "0.1.0"
