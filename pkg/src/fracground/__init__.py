"""Ground states and sharp inequality constants for fractional
p-sublaplacians on stratified Lie groups (Euclidean R^N and the first
Heisenberg group)."""

from .groups import GroupSpec, euclidean, heisenberg1
from .grids import BoxDomain, GridFunction, box_for_group, sample
from .nonlocal_ops import KernelSpec, gagliardo_pp, pairing, seminorm_gradient
from .variational import (GroundStateResult, ProblemParams, SolverOptions,
                          energy, nehari_theta, rayleigh, solve_ground_state)

__all__ = [
    "GroupSpec", "euclidean", "heisenberg1",
    "BoxDomain", "GridFunction", "box_for_group", "sample",
    "KernelSpec", "gagliardo_pp", "pairing", "seminorm_gradient",
    "ProblemParams", "SolverOptions", "GroundStateResult",
    "energy", "nehari_theta", "rayleigh", "solve_ground_state",
]

__version__ = "0.1.0"
