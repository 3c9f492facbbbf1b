"""Discrete periodic convolution W * rho and the transport velocity it induces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import DensityField
from .kernels import COMPACT, Kernel, lattice_offsets

# Above this many cells per axis the FFT path is used by default.
FFT_THRESHOLD = 256


class StencilError(ValueError):
    pass


@dataclass(frozen=True)
class KernelStencil:
    """Midpoint-quadrature weights W(j dx) dx^d on a (2 reach + 1)^d block.

    ``weights`` is centred: offset j lives at index ``j + reach`` on each axis.
    """

    weights: np.ndarray = field(repr=False)
    reach: int
    dx: float

    @property
    def dims(self) -> int:
        return self.weights.ndim

    @property
    def width(self) -> int:
        return 2 * self.reach + 1

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    def check_fits(self, shape) -> None:
        if len(shape) != self.dims:
            raise StencilError(f"{self.dims}D stencil applied to {len(shape)}D field")
        if any(self.width > n for n in shape):
            raise StencilError(
                f"stencil width {self.width} exceeds grid shape {tuple(shape)}; periodic wrap would double count"
            )

    def reduced_1d(self) -> "KernelStencil":
        """Sum a 2D stencil along y: the exact 1D stencil for y-independent fields."""
        if self.dims != 2:
            raise StencilError("only 2D stencils can be reduced")
        return KernelStencil(self.weights.sum(axis=1), self.reach, self.dx)


def build_stencil(k: Kernel, dx: float, dims: int | None = None, truncation: float | None = None) -> KernelStencil:
    """Sample the kernel at lattice offsets with |j dx| <= truncation."""
    if not dx > 0:
        raise ValueError("dx must be positive")
    dims = k.dimension if dims is None else dims
    if truncation is None:
        truncation = k.effective_radius
    if k.kind == COMPACT and truncation < k.support_radius:
        raise StencilError("truncation must cover the kernel support")
    offsets, reach = lattice_offsets(dx, dims, truncation)
    weights = np.zeros((2 * reach + 1,) * dims)
    r = np.linalg.norm(offsets * dx, axis=1)
    weights[tuple((offsets + reach).T)] = k.profile(r) * dx**dims
    return KernelStencil(weights, reach, dx)


def zero_stencil(dx: float, dims: int = 1) -> KernelStencil:
    return KernelStencil(np.zeros((1,) * dims), 0, dx)


def _check(s: KernelStencil, f: DensityField) -> None:
    if abs(s.dx - f.dx) > 1e-12 * f.dx:
        raise StencilError(f"stencil dx {s.dx} does not match field dx {f.dx}")
    s.check_fits(f.shape)


def convolve_direct(s: KernelStencil, data: np.ndarray) -> np.ndarray:
    if s.dims == 1:
        return ndimage.convolve1d(data, s.weights, mode="wrap")
    return ndimage.convolve(data, s.weights, mode="wrap")


def _embedded_kernel(s: KernelStencil, shape) -> np.ndarray:
    """Stencil placed on the periodic grid with offset 0 at index 0."""
    out = np.zeros(shape)
    offsets = np.argwhere(np.ones(s.weights.shape, dtype=bool)) - s.reach
    idx = tuple((offsets % np.asarray(shape)).T)
    out[idx] = s.weights.ravel()
    return out


def convolve_fft(s: KernelStencil, data: np.ndarray) -> np.ndarray:
    kern = _embedded_kernel(s, data.shape)
    axes = tuple(range(data.ndim))
    return np.fft.irfftn(np.fft.rfftn(kern) * np.fft.rfftn(data), s=data.shape, axes=axes)


def convolve(s: KernelStencil, f: DensityField, method: str = "auto") -> np.ndarray:
    """V_i = sum_j w_j f_{i-j} with periodic indexing.

    ``method`` is ``"direct"``, ``"fft"`` or ``"auto"`` (FFT once any axis has
    more than 256 cells).
    """
    _check(s, f)
    if method == "auto":
        method = "fft" if max(f.shape) > FFT_THRESHOLD else "direct"
    if method == "direct":
        return convolve_direct(s, f.data)
    if method == "fft":
        return convolve_fft(s, f.data)
    raise ValueError(f"unknown convolution method {method!r}")


def face_velocity(V: np.ndarray, dx: float, axis: int = 0) -> np.ndarray:
    """u at face i+1/2 along ``axis``: -(V_{i+1} - V_i)/dx, periodic."""
    V = np.asarray(V, dtype=float)
    return -(np.roll(V, -1, axis=axis) - V) / dx
