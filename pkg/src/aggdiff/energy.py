"""Lyapunov energy E = S + I and the Euler-Lagrange diagnostics of stationary states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convolution import KernelStencil, convolve
from .grid import DensityField, SupportComponents, lp_norm, total_mass
from .integrator import SimParams, interaction_energy_terms

# Interior cells must carry at least this fraction of their component's maximum.
INTERIOR_FRACTION = 0.1


@dataclass(frozen=True)
class EnergyBreakdown:
    entropy: float
    interaction: float

    @property
    def total(self) -> float:
        return self.entropy + self.interaction


def energy(f: DensityField, s: KernelStencil, p: SimParams) -> EnergyBreakdown:
    """S = eps/(m-1) sum rho^m dx^d and I = 1/2 sum rho (W * rho) dx^d."""
    V = convolve(s, f)
    entropy, interaction = interaction_energy_terms(f.data, V, p, f.cell_volume)
    return EnergyBreakdown(entropy, interaction)


def euler_lagrange_field(f: DensityField, s: KernelStencil, p: SimParams) -> np.ndarray:
    """Lambda = m eps/(m-1) rho^(m-1) + W * rho, constant on each support component at equilibrium."""
    rho = np.maximum(f.data, 0.0)
    return p.m * p.epsilon / (p.m - 1.0) * rho ** (p.m - 1.0) + convolve(s, f)


def minimizer_constant(f: DensityField, s: KernelStencil, p: SimParams) -> float:
    """D = 2E/M + eps (m-2)/(M (m-1)) ||rho||_m^m, the multiplier of a connected minimiser."""
    M = total_mass(f)
    e = energy(f, s, p).total
    return 2.0 * e / M + p.epsilon * (p.m - 2.0) / (M * (p.m - 1.0)) * lp_norm(f, p.m) ** p.m


def interior_mask(f: DensityField, component_mask: np.ndarray) -> np.ndarray:
    """Component cells whose axis neighbours are in the component and rho > 10% of its max."""
    inner = component_mask.copy()
    for axis in range(f.dims):
        inner &= np.roll(component_mask, 1, axis=axis) & np.roll(component_mask, -1, axis=axis)
    peak = float(np.max(f.data[component_mask]))
    return inner & (f.data > INTERIOR_FRACTION * peak)


@dataclass(frozen=True)
class ComponentConstant:
    mean: float
    std: float
    cells: int

    @property
    def relative_deviation(self) -> float:
        return self.std / abs(self.mean) if self.mean != 0 else float("inf")


def component_constants(
    f: DensityField, comps: SupportComponents, s: KernelStencil, p: SimParams
) -> list[ComponentConstant]:
    """Mean and spread of Lambda over the interior of each component."""
    lam = euler_lagrange_field(f, s, p)
    out = []
    for mask in comps.masks(f.shape):
        inner = interior_mask(f, mask)
        if not inner.any():
            inner = mask
        vals = lam[inner]
        out.append(ComponentConstant(float(np.mean(vals)), float(np.std(vals)), int(vals.size)))
    return out


def outside_support_violations(
    f: DensityField, comps: SupportComponents, s: KernelStencil, p: SimParams, constant: float
) -> int:
    """Number of off-support cells where Lambda < constant (reported, never enforced)."""
    lam = euler_lagrange_field(f, s, p)
    support = np.zeros(f.shape, dtype=bool)
    for mask in comps.masks(f.shape):
        support |= mask
    return int(np.count_nonzero(lam[~support] < constant - 1e-12 * abs(constant)))
