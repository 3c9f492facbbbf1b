"""Radially symmetric attractive interaction kernels W(x) = omega(|x|)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

Profile = Callable[[np.ndarray], np.ndarray]

COMPACT = "compact"
UNBOUNDED = "unbounded"

# |omega| below this is treated as zero when truncating unbounded kernels.
TAIL_TOLERANCE = 1e-12

# The bump exponent 1/(r^2 - 1) is not evaluated this close to r = 1.
_BUMP_CUTOFF = 1.0 - 1e-8


class InvalidKernelError(ValueError):
    pass


class StencilTooCoarseError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Radial profile of an interaction potential plus its structural data.

    ``profile`` and ``derivative`` take radii (r >= 0) as arrays. The potential
    is normalised to vanish at infinity, so ``profile <= 0`` everywhere.
    """

    name: str
    profile: Profile = field(repr=False)
    derivative: Profile = field(repr=False)
    support_radius: float
    dimension: int = 1
    kind: str = COMPACT

    def __post_init__(self):
        if self.kind not in (COMPACT, UNBOUNDED):
            raise InvalidKernelError(f"unknown kernel kind {self.kind!r}")
        if self.dimension not in (1, 2):
            raise InvalidKernelError("only d = 1 and d = 2 are supported")
        if not self.support_radius > 0:
            raise InvalidKernelError("support radius must be positive")

    def __call__(self, r) -> np.ndarray:
        return self.profile(np.abs(np.asarray(r, dtype=float)))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """W at points ``x`` of shape (..., d) (or (...,) when d = 1)."""
        x = np.asarray(x, dtype=float)
        r = np.abs(x) if self.dimension == 1 else np.linalg.norm(x, axis=-1)
        return self.profile(r)

    @property
    def effective_radius(self) -> float:
        """Radius beyond which the kernel is (numerically) zero."""
        if self.kind == COMPACT:
            return self.support_radius
        return self.truncation_radius

    @cached_property
    def truncation_radius(self) -> float:
        if self.kind == COMPACT:
            return self.support_radius
        lo, hi = 0.0, 1.0
        while abs(float(self.profile(np.array([hi]))[0])) >= TAIL_TOLERANCE:
            lo, hi = hi, 2.0 * hi
            if hi > 1e8:
                raise InvalidKernelError(f"{self.name}: profile does not decay to {TAIL_TOLERANCE:g}")
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if abs(float(self.profile(np.array([mid]))[0])) >= TAIL_TOLERANCE:
                lo = mid
            else:
                hi = mid
        return hi

    @cached_property
    def l1_norm(self) -> float:
        """||W||_{L^1(R^d)} by adaptive radial quadrature."""
        surface = 2.0 if self.dimension == 1 else 2.0 * math.pi
        power = self.dimension - 1

        def integrand(r):
            return abs(float(self.profile(np.array([r]))[0])) * r**power

        upper = self.effective_radius
        value, _ = integrate.quad(integrand, 0.0, upper, limit=400, epsabs=1e-13, epsrel=1e-12)
        return surface * value

    def with_dimension(self, dimension: int) -> "Kernel":
        return Kernel(self.name, self.profile, self.derivative, self.support_radius, dimension, self.kind)


def _bump_profile(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < _BUMP_CUTOFF
    ri = r[inside]
    out[inside] = -5.0 * np.exp(1.0 / (ri * ri - 1.0))
    return out


def _bump_derivative(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < _BUMP_CUTOFF
    ri = r[inside]
    s = ri * ri - 1.0
    out[inside] = 10.0 * ri * np.exp(1.0 / s) / (s * s)
    return out


def make_bump_kernel(dimension: int = 1) -> Kernel:
    """W(x) = -5 exp(1/(|x|^2 - 1)) for |x| < 1, zero outside."""
    return Kernel("bump", _bump_profile, _bump_derivative, 1.0, dimension, COMPACT)


def make_exponential_kernel(dimension: int = 1) -> Kernel:
    """W(x) = -exp(-|x|), globally supported."""
    return Kernel(
        "exponential",
        lambda r: -np.exp(-np.asarray(r, dtype=float)),
        lambda r: np.exp(-np.asarray(r, dtype=float)),
        math.inf,
        dimension,
        UNBOUNDED,
    )


def make_parabola_kernel(dimension: int = 1) -> Kernel:
    """W(x) = -max(1 - |x|^2, 0)."""

    def profile(r):
        r = np.asarray(r, dtype=float)
        return -np.maximum(1.0 - r * r, 0.0)

    def derivative(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, 2.0 * r, 0.0)

    return Kernel("parabola", profile, derivative, 1.0, dimension, COMPACT)


def make_tabulated_kernel(radii, values, dimension: int = 1, name: str = "custom") -> Kernel:
    """Piecewise-linear profile through (radii, values), zero past the last radius."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    if radii.ndim != 1 or radii.shape != values.shape or radii.size < 2:
        raise InvalidKernelError("tabulated kernel needs two equal-length columns with at least 2 rows")
    if radii[0] != 0.0:
        raise InvalidKernelError("tabulated radii must start at 0")
    if np.any(np.diff(radii) <= 0):
        raise InvalidKernelError("tabulated radii must be strictly increasing")
    if not np.all(np.isfinite(values)):
        raise InvalidKernelError("tabulated kernel has non-finite values")
    last = radii[-1]
    slopes = np.diff(values) / np.diff(radii)

    def profile(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < last, np.interp(r, radii, values), 0.0)

    def derivative(r):
        r = np.asarray(r, dtype=float)
        idx = np.clip(np.searchsorted(radii, r, side="right") - 1, 0, slopes.size - 1)
        return np.where(r < last, slopes[idx], 0.0)

    return Kernel(name, profile, derivative, float(last), dimension, COMPACT)


def load_tabulated_kernel(path, dimension: int = 1) -> Kernel:
    table = np.loadtxt(Path(path), ndmin=2)
    if table.shape[1] != 2:
        raise InvalidKernelError(f"{path}: expected two whitespace-separated columns")
    return make_tabulated_kernel(table[:, 0], table[:, 1], dimension, name=f"custom:{Path(path).name}")


KERNEL_FACTORIES = {
    "bump": make_bump_kernel,
    "exponential": make_exponential_kernel,
    "parabola": make_parabola_kernel,
}


def kernel_by_name(name: str, dimension: int = 1, table=None) -> Kernel:
    if name == "custom":
        if table is None:
            raise InvalidKernelError("custom kernel requires a table file")
        return load_tabulated_kernel(table, dimension)
    try:
        return KERNEL_FACTORIES[name](dimension)
    except KeyError:
        raise InvalidKernelError(
            f"unknown kernel {name!r}; choose from {sorted(KERNEL_FACTORIES) + ['custom']}"
        ) from None


@dataclass
class KernelAssumptions:
    """Outcome of :func:`validate_kernel`; ``checks`` maps check name to verdict."""

    kernel: str
    kind: str
    checks: dict[str, bool]
    c_omega: float
    applicable: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return all(self.checks[name] for name in self.applicable)

    def failures(self) -> list[str]:
        return [name for name in self.applicable if not self.checks[name]]


def validate_kernel(k: Kernel, samples: int = 1024) -> KernelAssumptions:
    """Check the structural kernel assumptions W1-W4 on a dense radial sample.

    Beyond W1-W4 the report carries ``monotone`` (omega non-decreasing with
    omega' >= 0) and ``nonpositive`` (omega <= 0). ``applicable`` lists the
    checks that define a pass for this kernel's kind.
    """
    if samples < 16:
        raise ValueError("validate_kernel needs at least 16 samples")
    outer = 1.5 * k.support_radius if k.kind == COMPACT else k.truncation_radius
    r = np.linspace(outer / samples, outer, samples)
    prof = np.asarray(k.profile(r), dtype=float)
    bad = ~np.isfinite(prof)
    if bad.any():
        raise InvalidKernelError(f"{k.name}: non-finite profile value at r = {r[bad][0]:.6g}")
    der = np.asarray(k.derivative(r), dtype=float)
    at_zero = float(k.profile(np.array([0.0]))[0])
    if not math.isfinite(at_zero):
        raise InvalidKernelError(f"{k.name}: non-finite profile value at r = 0")

    scale = max(np.max(np.abs(prof)), abs(at_zero), 1e-300)
    checks: dict[str, bool] = {}

    # W1: finite C^1 radial profile; omega' integrates back to omega.
    h = np.diff(r)
    integrated = np.cumsum(0.5 * (der[1:] + der[:-1]) * h)
    drift = np.max(np.abs(integrated - (prof[1:] - prof[0])))
    checks["W1"] = bool(np.all(np.isfinite(der)) and drift <= 1e-2 * scale)

    checks["monotone"] = bool(np.all(np.diff(prof) >= -1e-14 * scale) and np.all(der >= 0.0))
    checks["nonpositive"] = bool(np.all(prof <= 0.0) and at_zero <= 0.0)

    # W2: omega'(r) r^(d-1) bounded on (0, 1].
    near = r <= 1.0
    weighted = der[near] * r[near] ** (k.dimension - 1)
    c_omega = float(np.max(weighted)) if weighted.size else 0.0
    checks["W2"] = bool(np.isfinite(c_omega))

    if k.kind == UNBOUNDED:
        far = r > 1.0
        tail = float(k.profile(np.array([k.truncation_radius]))[0])
        checks["W3"] = bool(
            np.all(der > 0.0)
            and np.all(prof < 0.0)
            and (not far.any() or np.isfinite(np.max(der[far])))
            and abs(tail) < TAIL_TOLERANCE
        )
        checks["W4"] = False
        applicable = ("W1", "W2", "W3", "monotone", "nonpositive")
    else:
        inside = r < k.support_radius
        outside = r >= k.support_radius
        checks["W4"] = bool(
            np.all(der[inside] > 0.0) and np.all(prof[outside] == 0.0) and np.all(der[outside] == 0.0)
        )
        checks["W3"] = False
        applicable = ("W1", "W2", "W4", "monotone", "nonpositive")
    return KernelAssumptions(k.name, k.kind, checks, c_omega, applicable)


def lattice_offsets(dx: float, dims: int, radius: float) -> tuple[np.ndarray, int]:
    """Integer offsets j with |j dx| <= radius, as an array of shape (n, dims)."""
    reach = int(math.ceil(radius / dx - 1e-12))
    axis = np.arange(-reach, reach + 1)
    if dims == 1:
        offsets = axis[:, None]
    else:
        jx, jy = np.meshgrid(axis, axis, indexing="ij")
        offsets = np.stack([jx.ravel(), jy.ravel()], axis=1)
    dist = np.linalg.norm(offsets * dx, axis=1)
    keep = dist <= radius * (1 + 1e-12)
    return offsets[keep], reach


def kernel_l1_norm(k: Kernel, dx: float, radius_cap: float | None = None) -> float:
    """Midpoint-lattice L^1 norm sum |W(j dx)| dx^d on the convolution lattice."""
    if not dx > 0:
        raise ValueError("dx must be positive")
    if k.kind == COMPACT and dx >= 2.0 * k.support_radius:
        raise StencilTooCoarseError(
            f"dx = {dx} >= 2 * support radius {k.support_radius}: kernel invisible to the grid"
        )
    if radius_cap is None:
        radius_cap = k.effective_radius
    if k.kind == UNBOUNDED and radius_cap < k.truncation_radius:
        raise ValueError(f"radius_cap {radius_cap} below truncation radius {k.truncation_radius:.4g}")
    offsets, _ = lattice_offsets(dx, k.dimension, radius_cap)
    r = np.linalg.norm(offsets * dx, axis=1)
    return float(np.sum(np.abs(k.profile(r))) * dx**k.dimension)
