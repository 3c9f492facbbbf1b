"""Verdicts on converged fields: component shape, gaps and density bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .convolution import KernelStencil
from .energy import component_constants, minimizer_constant
from .grid import DensityField, SupportComponents, component_gap, support_components, total_mass, unwrapped_coordinates
from .integrator import SimParams, Trajectory
from .kernels import COMPACT, Kernel, kernel_l1_norm

MONOTONE_TOLERANCE = 0.01
SPREAD_TOLERANCE = 0.05
BOUND_SLACK = 1e-6
# Guards floor() against round-off when r sits exactly on a bin edge.
BIN_EPS = 1e-6

PASS = "pass"
FAIL = "fail"
NOT_APPLICABLE = "n/a"


def _check_exponent(p: SimParams) -> None:
    if not p.m > 2:
        raise ValueError(f"closed-form density bounds need m > 2 (m = 2 is the threshold case), got m = {p.m}")


def rho_star(p: SimParams, l1: float) -> float:
    """Mass-independent upper bound ((m-1)/(m eps) * ||W||_1)^(1/(m-2))."""
    _check_exponent(p)
    if not l1 > 0:
        raise ValueError("l1 must be positive")
    return ((p.m - 1.0) / (p.m * p.epsilon) * l1) ** (1.0 / (p.m - 2.0))


def rho_plateau(p: SimParams, l1: float) -> float:
    """Large-mass plateau estimate (||W||_1 / (2 eps))^(1/(m-2))."""
    _check_exponent(p)
    if not l1 > 0:
        raise ValueError("l1 must be positive")
    return (l1 / (2.0 * p.epsilon)) ** (1.0 / (p.m - 2.0))


@dataclass(frozen=True)
class RadialVerdict:
    """Bin-averaged profile around the centre of mass.

    ``violation`` is the largest rise of the bin means above their running
    minimum. ``spread`` is the range (max minus min) of the residuals of the
    cell values about their best non-increasing fit in r. Within one radius
    bin the fit is nearly flat, so this is the within-bin value range; it
    vanishes exactly when the component is a decreasing function of r. Both
    are relative to the component maximum.
    """

    center: tuple[float, ...]
    violation: float
    spread: float
    monotone_tol: float = MONOTONE_TOLERANCE
    spread_tol: float = SPREAD_TOLERANCE

    @property
    def monotone(self) -> bool:
        return self.violation <= self.monotone_tol

    @property
    def symmetric(self) -> bool:
        return self.spread <= self.spread_tol

    @property
    def passed(self) -> bool:
        return self.monotone and self.symmetric


def radial_monotonicity(
    f: DensityField,
    c: np.ndarray,
    monotone_tol: float = MONOTONE_TOLERANCE,
    spread_tol: float = SPREAD_TOLERANCE,
) -> RadialVerdict:
    c = np.asarray(c)
    if len(c) == 0:
        raise ValueError("component is empty")
    values = f.data[tuple(c.T)]
    peak = float(np.max(values))
    xy = unwrapped_coordinates(c, f)
    weights = np.maximum(values, 0.0)
    center = weights @ xy / weights.sum() if weights.sum() > 0 else xy.mean(axis=0)
    r = np.sqrt(np.sum((xy - center) ** 2, axis=1))
    bins = np.floor(r / f.dx + BIN_EPS).astype(int)
    count = np.bincount(bins)
    used = count > 0
    mean_v = np.bincount(bins, weights=values)[used] / count[used]

    running_min = np.minimum.accumulate(mean_v)
    rise = float(np.max(mean_v[1:] - running_min[:-1])) if mean_v.size > 1 else 0.0
    order = np.argsort(r, kind="stable")
    residual = values[order] - isotonic_regression(values[order], increasing=False).x
    dev = float(np.max(residual) - np.min(residual))
    scale = peak if peak > 0 else 1.0
    return RadialVerdict(
        center=tuple(float(v) for v in center),
        violation=max(rise, 0.0) / scale,
        spread=dev / scale,
        monotone_tol=monotone_tol,
        spread_tol=spread_tol,
    )


@dataclass(frozen=True)
class GapVerdict:
    status: str
    min_gap: float | None
    required: float | None

    @property
    def passed(self) -> bool:
        return self.status != FAIL


def min_component_gap(f: DensityField, comps: SupportComponents) -> float | None:
    if len(comps) < 2:
        return None
    return min(component_gap(comps[i], comps[j], f) for i in range(len(comps)) for j in range(i + 1, len(comps)))


def gap_check(f: DensityField, comps: SupportComponents, k: Kernel) -> GapVerdict:
    """Components of a compact-kernel state sit at least R - dx apart (one cell of quantization slack)."""
    gap = min_component_gap(f, comps)
    if k.kind != COMPACT or gap is None:
        return GapVerdict(NOT_APPLICABLE, gap, None)
    required = k.support_radius - f.dx
    return GapVerdict(PASS if gap >= required else FAIL, gap, required)


@dataclass(frozen=True)
class BoundVerdict:
    status: str
    max_density: float
    rho_star: float | None
    plateau_ratio: float | None

    @property
    def passed(self) -> bool:
        return self.status != FAIL


def bound_check(max_density: float, rho_s: float | None, rho_e: float | None = None) -> BoundVerdict:
    """max density <= rho_star (1 + 1e-6); not applicable without a bound (m <= 2)."""
    ratio = max_density / rho_e if rho_e else None
    if rho_s is None:
        return BoundVerdict(NOT_APPLICABLE, max_density, None, ratio)
    status = PASS if max_density <= rho_s * (1.0 + BOUND_SLACK) else FAIL
    return BoundVerdict(status, max_density, rho_s, ratio)


@dataclass(frozen=True)
class ComponentRecord:
    center: tuple[float, ...]
    max_density: float
    measure: float
    radial: RadialVerdict
    lambda_mean: float
    lambda_deviation: float


@dataclass
class StationaryReport:
    kernel: str
    m: float
    mass: float
    converged: bool
    final_change: float
    steps: int
    energy_final: float | None
    components: list[ComponentRecord]
    min_gap: float | None
    rho_star: float | None
    rho_E: float | None
    max_density: float
    gap: GapVerdict = field(repr=False, default=None)
    bound: BoundVerdict = field(repr=False, default=None)
    minimizer_constant: float | None = None

    CSV_COLUMNS = ("m", "M", "kernel", "max_density", "rho_star", "rho_E", "min_gap", "converged", "steps", "energy_final")

    @property
    def lambda_flat(self) -> bool:
        """Every component's interior Lambda varies by at most 1% of its mean."""
        return all(c.lambda_deviation <= 0.01 for c in self.components)

    @property
    def constant_mismatch(self) -> float | None:
        """|Lambda - D| / |D| for single-component states, else None."""
        if len(self.components) != 1 or self.minimizer_constant is None:
            return None
        D = self.minimizer_constant
        return abs(self.components[0].lambda_mean - D) / abs(D)

    @property
    def radially_decreasing(self) -> bool:
        return all(c.radial.passed for c in self.components)

    def row(self) -> dict:
        return {
            "m": self.m,
            "M": self.mass,
            "kernel": self.kernel,
            "max_density": self.max_density,
            "rho_star": self.rho_star,
            "rho_E": self.rho_E,
            "min_gap": self.min_gap,
            "converged": self.converged,
            "steps": self.steps,
            "energy_final": self.energy_final,
        }

    def text(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{v:.6g}"

        lines = [
            f"kernel {self.kernel}, m = {self.m:g}, M = {self.mass:.6g}",
            f"converged: {self.converged} after {self.steps} steps (last change {self.final_change:.3e})",
            f"max density {self.max_density:.6g}, rho_star {fmt(self.rho_star)}, rho_E {fmt(self.rho_E)}",
            f"bound: {self.bound.status}" + (
                f" (max / rho_E = {self.bound.plateau_ratio:.4f})" if self.bound.plateau_ratio is not None else ""
            ),
            f"components: {len(self.components)}, min gap {fmt(self.min_gap)} ({self.gap.status})",
        ]
        for i, c in enumerate(self.components):
            center = ", ".join(f"{x:.3f}" for x in c.center)
            lines.append(
                f"  [{i}] center ({center}) max {c.max_density:.6g} measure {c.measure:.4g} "
                f"radial {'pass' if c.radial.passed else 'fail'} "
                f"(violation {c.radial.violation:.2e}, spread {c.radial.spread:.2e}) "
                f"Lambda {c.lambda_mean:.6g} +/- {c.lambda_deviation:.2e}"
            )
        if self.constant_mismatch is not None:
            lines.append(f"Lambda vs D: relative mismatch {self.constant_mismatch:.3e}")
        return "\n".join(lines)


def analyze(
    f: DensityField,
    k: Kernel,
    s: KernelStencil,
    p: SimParams,
    trajectory: Trajectory | None = None,
    l1: float | None = None,
    threshold: float | None = None,
) -> StationaryReport:
    """Build the full report for a (presumably) converged field.

    ``l1`` defaults to the lattice norm of the kernel at the field's spacing,
    the norm the discrete equilibrium actually sees.
    """
    comps = support_components(f, threshold)
    if l1 is None:
        l1 = kernel_l1_norm(k.with_dimension(f.dims), f.dx)
    rs = rho_star(p, l1) if p.m > 2 else None
    re = rho_plateau(p, l1) if p.m > 2 else None
    constants = component_constants(f, comps, s, p)
    records = []
    for comp, const in zip(comps, constants):
        values = f.data[tuple(comp.T)]
        radial = radial_monotonicity(f, comp)
        records.append(
            ComponentRecord(
                center=radial.center,
                max_density=float(np.max(values)),
                measure=len(comp) * f.cell_volume,
                radial=radial,
                lambda_mean=const.mean,
                lambda_deviation=const.relative_deviation,
            )
        )
    max_density = max((r.max_density for r in records), default=0.0)
    gap = gap_check(f, comps, k)
    converged = trajectory.converged if trajectory is not None else False
    return StationaryReport(
        kernel=k.name,
        m=p.m,
        mass=total_mass(f),
        converged=converged,
        final_change=trajectory.final_change if trajectory is not None else math.nan,
        steps=len(trajectory) - 1 if trajectory is not None else 0,
        energy_final=trajectory.energy[-1] if trajectory is not None and trajectory.energy else None,
        components=records,
        min_gap=gap.min_gap,
        rho_star=rs,
        rho_E=re,
        max_density=max_density,
        gap=gap,
        bound=bound_check(max_density, rs, re),
        minimizer_constant=minimizer_constant(f, s, p) if records else None,
    )
