"""Finite element experiments on size estimates for conductivity inclusions.

Forward solves on structured square/cube meshes of high-continuity quadratic
elements, for Neumann current data and the complete electrode model, plus
inclusion generators, bound lines and batch sweeps.
"""

from .bounds import (
    BoundsLine,
    check_bounds,
    empirical_constants,
    frequency,
    theoretical_line_cem_uniform,
    theoretical_line_cosine,
    theoretical_line_uniform,
)
from .experiments import SweepPlan, gen_blocks, gen_connected, run_sweep
from .forward import ForwardModel, SolveRecord, power_cem, power_neumann
from .mesh import InclusionMask, StructuredMesh, build_mesh

__version__ = "0.1.0"

__all__ = [
    "BoundsLine",
    "ForwardModel",
    "InclusionMask",
    "SolveRecord",
    "StructuredMesh",
    "SweepPlan",
    "build_mesh",
    "check_bounds",
    "empirical_constants",
    "frequency",
    "gen_blocks",
    "gen_connected",
    "power_cem",
    "power_neumann",
    "run_sweep",
    "theoretical_line_cem_uniform",
    "theoretical_line_cosine",
    "theoretical_line_uniform",
]
