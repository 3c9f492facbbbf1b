"""Aggregation-diffusion simulator with stationary-state diagnostics.

Solves d/dt rho = eps * Lap(rho^m) + div(rho grad(W * rho)) on periodic grids
and checks the structure of the resulting stationary states.
"""

from .convolution import KernelStencil, build_stencil, convolve, face_velocity
from .energy import EnergyBreakdown, energy, euler_lagrange_field
from .grid import DensityField, SupportComponents, component_gap, lp_norm, support_components, total_mass
from .integrator import SimParams, StepReport, run_to_stationary, step
from .stationary import StationaryReport, analyze, rho_plateau, rho_star
from .kernels import (
    Kernel,
    kernel_l1_norm,
    make_bump_kernel,
    make_exponential_kernel,
    make_parabola_kernel,
    validate_kernel,
)


__version__ = "0.1.0"

__all__ = [
    "DensityField",
    "EnergyBreakdown",
    "Kernel",
    "KernelStencil",
    "SimParams",
    "StationaryReport",
    "StepReport",
    "SupportComponents",
    "analyze",
    "build_stencil",
    "component_gap",
    "convolve",
    "energy",
    "euler_lagrange_field",
    "face_velocity",
    "kernel_l1_norm",
    "lp_norm",
    "make_bump_kernel",
    "make_exponential_kernel",
    "make_parabola_kernel",
    "rho_plateau",
    "rho_star",
    "run_to_stationary",
    "step",
    "support_components",
    "total_mass",
    "validate_kernel",
]
