"""IMEX time stepping: implicit nonlinear diffusion, explicit interaction potential.

One step of size dt solves for rho = rho^{n+1}

    rho + dt * div_h F = rho^n,
    F_{i+1/2} = u+ rho_i + u- rho_{i+1},   u = -(xi_{i+1} - xi_i) / dx,
    xi = m eps/(m-1) rho^(m-1) + W * rho^n.

Diffusion and aggregation share one upwind flux driven by the gradient of
the first variation of the energy. The enthalpy part is implicit, the
convolution is frozen at the old time level. The nonlinear system is solved
by Newton's method. The update is in flux form, so mass is conserved to
round-off; the upwind matrix is an M-matrix, which keeps rho nonnegative.
dt is capped so the interaction velocity moves less than one cell per step.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .convolution import KernelStencil, convolve, face_velocity
from .grid import NEGATIVE_TOLERANCE, DensityField, total_mass, write_field_csv
from .linalg import solve_cyclic_tridiagonal

log = logging.getLogger(__name__)

# Keeps the Jacobian nonsingular on empty cells, where d(rho^m)/d rho = 0.
JACOBIAN_REGULARIZATION = 1e-14


class StepFailure(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class PositivityViolation(RuntimeError):
    pass


@dataclass
class SimParams:
    m: float
    epsilon: float = 1.0
    dt: float = 0.4
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    steady_tol: float = 1e-7
    max_steps: int = 200_000
    cfl_safety: float = 0.9
    max_halvings: int = 12
    jacobian: str = "sparse"

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError(f"diffusion exponent must satisfy m > 1, got {self.m}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.jacobian not in ("sparse", "adi"):
            raise ValueError(f"jacobian must be 'sparse' or 'adi', got {self.jacobian!r}")
        if self.max_halvings < 0:
            raise ValueError("max_halvings must be nonnegative")


@dataclass
class StepReport:
    mass_drift: float = 0.0
    min_value: float = 0.0
    newton_iters: int = 0
    energy: float = 0.0
    dt_used: float = 0.0
    residuals: list[float] = field(default_factory=list)


def _pressure(rho, m):
    pos = np.maximum(rho, 0.0)
    return pos**m


def enthalpy(rho, p: "SimParams"):
    """h(rho) = m eps/(m-1) rho^(m-1), the first variation of the entropy."""
    pos = np.maximum(rho, 0.0)
    return p.m * p.epsilon / (p.m - 1.0) * pos ** (p.m - 1.0)


def _enthalpy_slope(rho, p: "SimParams"):
    pos = np.maximum(rho, 0.0)
    with np.errstate(divide="ignore"):
        slope = np.where(pos > 0.0, p.m * p.epsilon * pos ** (p.m - 2.0), 0.0)
    return slope + JACOBIAN_REGULARIZATION


def upwind_flux(rho: np.ndarray, xi: np.ndarray, dx: float, axis: int):
    """F_{i+1/2} = u+ rho_i + u- rho_{i+1} with u = -(xi_{i+1} - xi_i)/dx."""
    u = face_velocity(xi, dx, axis)
    upwind = np.where(u > 0.0, rho, np.roll(rho, -1, axis=axis))
    return u * upwind, u, upwind


def flux_divergence(rho: np.ndarray, xi: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros_like(rho)
    for axis in range(rho.ndim):
        F, _, _ = upwind_flux(rho, xi, dx, axis)
        out += (F - np.roll(F, 1, axis=axis)) / dx
    return out


def cfl_step(V: np.ndarray, dx: float, dt: float, cfl_safety: float) -> float:
    """Shorten dt so the explicit interaction velocity moves < cfl_safety cells."""
    speed = max(float(np.max(np.abs(face_velocity(V, dx, axis)))) for axis in range(V.ndim))
    if speed * dt / dx <= cfl_safety:
        return dt
    return cfl_safety * dx / speed


def _face_derivatives(rho, xi, slope, dx, axis):
    """dF/d(left cell) and dF/d(right cell) at each face i+1/2 along ``axis``."""
    _, u, upwind = upwind_flux(rho, xi, dx, axis)
    right_slope = np.roll(slope, -1, axis=axis)
    dleft = np.where(u > 0.0, u, 0.0) + upwind * slope / dx
    dright = np.where(u > 0.0, 0.0, u) - upwind * right_slope / dx
    return dleft, dright


def _adi_direction(resid, rho, xi, slope, dx, c):
    """Newton step with the Jacobian replaced by a product of per-axis factors (exact in 1D)."""
    delta = -resid
    for axis in range(rho.ndim):
        dleft, dright = _face_derivatives(rho, xi, slope, dx, axis)
        diag = 1.0 + c * (dleft - np.roll(dright, 1, axis=axis))
        upper = c * dright
        lower = -c * np.roll(dleft, 1, axis=axis)
        delta = np.moveaxis(
            solve_cyclic_tridiagonal(
                np.moveaxis(lower, axis, -1),
                np.moveaxis(diag, axis, -1),
                np.moveaxis(upper, axis, -1),
                np.moveaxis(delta, axis, -1),
            ),
            -1,
            axis,
        )
    return delta


def _sparse_direction(resid, rho, xi, slope, dx, c):
    """Newton step with the exact (2d+1)-point Jacobian and a sparse LU solve."""
    n = rho.size
    index = np.arange(n).reshape(rho.shape)
    rows = [index.ravel()]
    cols = [index.ravel()]
    vals = [np.ones(n)]
    for axis in range(rho.ndim):
        dleft, dright = _face_derivatives(rho, xi, slope, dx, axis)
        nxt = np.roll(index, -1, axis=axis).ravel()
        prv = np.roll(index, 1, axis=axis).ravel()
        here = index.ravel()
        rows += [here, here, here, here]
        cols += [here, here, nxt, prv]
        vals += [
            c * dleft.ravel(),
            -c * np.roll(dright, 1, axis=axis).ravel(),
            c * dright.ravel(),
            -c * np.roll(dleft, 1, axis=axis).ravel(),
        ]
    J = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return spsolve(J, -resid.ravel(), permc_spec="MMD_AT_PLUS_A").reshape(rho.shape)


def implicit_solve(rho_old: np.ndarray, V: np.ndarray, dx: float, dt: float, p: "SimParams"):
    """Solve rho + dt div F(rho; h(rho) + V) = rho_old by Newton's method.

    F is the upwind flux driven by the implicit enthalpy h(rho) and the
    frozen potential V. Returns (rho, iterations, residual history). The 1D
    Jacobian is cyclic tridiagonal. In 2D it is either assembled exactly and
    factored with sparse LU or, with ``jacobian="adi"``, replaced by the
    product (I + dt Jx)(I + dt Jy). Every column of these matrices sums to
    one, so each Newton update preserves mass exactly.
    """
    rho = rho_old.copy()
    c = dt / dx
    history = []
    for it in range(p.newton_max_iter + 1):
        xi = enthalpy(rho, p) + V
        resid = rho - rho_old + dt * flux_divergence(rho, xi, dx)
        norm = float(np.max(np.abs(resid)))
        history.append(norm)
        if norm < p.newton_tol:
            return rho, it, history
        if it == p.newton_max_iter or not math.isfinite(norm) or norm > 1e8 * (1.0 + history[0]):
            break
        slope = _enthalpy_slope(rho, p)
        if rho.ndim == 1 or p.jacobian == "adi":
            delta = _adi_direction(resid, rho, xi, slope, dx, c)
        else:
            delta = _sparse_direction(resid, rho, xi, slope, dx, c)
        rho = rho + delta
    raise StepFailure(f"Newton did not converge in {p.newton_max_iter} iterations", history[-1])


def interaction_energy_terms(rho: np.ndarray, V: np.ndarray, p: SimParams, cell_volume: float):
    entropy = p.epsilon / (p.m - 1.0) * float(np.sum(_pressure(rho, p.m))) * cell_volume
    interaction = 0.5 * float(np.sum(rho * V)) * cell_volume
    return entropy, interaction


def advance(rho: np.ndarray, V: np.ndarray, s: KernelStencil, p: SimParams, dx: float, dt: float | None = None):
    """One IMEX step on raw arrays. ``V`` is W * rho; returns (rho_new, V_new, report)."""
    dims = rho.ndim
    cell = dx**dims
    mass_before = float(np.sum(rho)) * cell
    dt_used = cfl_step(V, dx, p.dt if dt is None else dt, p.cfl_safety)
    for attempt in range(p.max_halvings + 1):
        try:
            new, iters, history = implicit_solve(rho, V, dx, dt_used, p)
        except StepFailure:
            if attempt == p.max_halvings:
                raise
        else:
            min_value = float(np.min(new))
            if min_value >= -NEGATIVE_TOLERANCE:
                break
            if attempt == p.max_halvings:
                raise PositivityViolation(f"density reached {min_value:.3e} after the step")
        dt_used *= 0.5
        log.debug("retrying step with dt = %.3e", dt_used)
    new[new < 0.0] = 0.0
    V_new = convolve(s, DensityField(new, dx, (0.0,) * dims))
    entropy, interaction = interaction_energy_terms(new, V_new, p, cell)
    report = StepReport(
        mass_drift=float(np.sum(new)) * cell - mass_before,
        min_value=min_value,
        newton_iters=iters,
        energy=entropy + interaction,
        dt_used=dt_used,
        residuals=history,
    )
    return new, V_new, report


def step(f: DensityField, s: KernelStencil, p: SimParams) -> tuple[DensityField, StepReport]:
    """Advance ``f`` by one IMEX step."""
    if np.min(f.data) < -NEGATIVE_TOLERANCE:
        raise PositivityViolation("step needs a nonnegative density")
    V = convolve(s, f)
    new, _, report = advance(f.data, V, s, p, f.dx)
    return f.with_data(new), report


@dataclass
class Trajectory:
    """Per-step history of a run plus its stopping status."""

    steps: list[int] = field(default_factory=list)
    time: list[float] = field(default_factory=list)
    mass: list[float] = field(default_factory=list)
    max_density: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    newton_iters: list[int] = field(default_factory=list)
    dt_used: list[float] = field(default_factory=list)
    min_value: list[float] = field(default_factory=list)
    mass_drift: list[float] = field(default_factory=list)
    converged: bool = False
    final_change: float = math.inf

    COLUMNS = ("step", "time", "mass", "max_density", "energy", "newton_iters")

    def append(self, n, t, rho, cell, report: StepReport):
        self.steps.append(n)
        self.time.append(t)
        self.mass.append(float(np.sum(rho)) * cell)
        self.max_density.append(float(np.max(rho)))
        self.energy.append(report.energy)
        self.newton_iters.append(report.newton_iters)
        self.dt_used.append(report.dt_used)
        self.min_value.append(report.min_value)
        self.mass_drift.append(report.mass_drift)

    def __len__(self):
        return len(self.steps)

    def rows(self):
        for i in range(len(self.steps)):
            yield (self.steps[i], self.time[i], self.mass[i], self.max_density[i], self.energy[i], self.newton_iters[i])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows():
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), repr(row[4]), row[5]])

    def energy_increases(self, rel_tol: float = 1e-8) -> list[int]:
        """Indices of steps whose energy rose by more than rel_tol * |E|."""
        e = np.asarray(self.energy)
        if e.size < 2:
            return []
        rise = e[1:] - e[:-1]
        return [int(i) + 1 for i in np.flatnonzero(rise > rel_tol * np.abs(e[:-1]))]


def run_to_stationary(
    f0: DensityField,
    s: KernelStencil,
    p: SimParams,
    snapshot_every: int | None = None,
    snapshot_dir=None,
    on_step: Callable[[int, np.ndarray, StepReport], None] | None = None,
) -> tuple[DensityField, Trajectory]:
    """Step until sup|rho^{n+1} - rho^n| / dt < steady_tol or ``max_steps``.

    Hitting ``max_steps`` is not an error: the last field is returned and the
    trajectory is flagged ``converged = False``.
    """
    if total_mass(f0) <= 0:
        raise ValueError("initial density must have positive mass")
    if np.min(f0.data) < -NEGATIVE_TOLERANCE:
        raise PositivityViolation("initial density has negative values")
    rho = np.maximum(f0.data, 0.0)
    cell = f0.cell_volume
    V = convolve(s, f0.with_data(rho))
    traj = Trajectory()
    entropy, interaction = interaction_energy_terms(rho, V, p, cell)
    traj.append(0, 0.0, rho, cell, StepReport(energy=entropy + interaction))
    if snapshot_dir is not None:
        snapshot_dir = Path(snapshot_dir)
        snapshot_dir.mkdir(parents=True, exist_ok=True)
    t = 0.0
    for n in range(1, p.max_steps + 1):
        new, V, report = advance(rho, V, s, p, f0.dx)
        t += report.dt_used
        change = float(np.max(np.abs(new - rho))) / report.dt_used
        rho = new
        traj.append(n, t, rho, cell, report)
        traj.final_change = change
        if on_step is not None:
            on_step(n, rho, report)
        if snapshot_every and snapshot_dir is not None and n % snapshot_every == 0:
            write_field_csv(f0.with_data(rho), snapshot_dir / f"snapshot_{n:07d}.csv")
        if change < p.steady_tol:
            traj.converged = True
            break
    else:
        log.warning("no stationary state after %d steps (last change %.3e)", p.max_steps, traj.final_change)
    return f0.with_data(rho), traj
