"""Uniform periodic lattices holding densities in one or two dimensions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

# Tiny negatives produced by round-off are tolerated up to this size.
NEGATIVE_TOLERANCE = 1e-12


@dataclass
class DensityField:
    """Cell-centred samples on a periodic grid with equal spacing ``dx`` on every axis.

    ``origin`` is the coordinate of the centre of cell 0 along each axis.
    """

    data: np.ndarray
    dx: float
    origin: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim not in (1, 2):
            raise ValueError("density fields are 1D or 2D")
        if min(self.data.shape) < 8:
            raise ValueError(f"need at least 8 cells per axis, got shape {self.data.shape}")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if self.origin is None:
            self.origin = tuple(-0.5 * (n - 1) * self.dx for n in self.data.shape)
        self.origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        if len(self.origin) != self.data.ndim:
            raise ValueError("origin needs one coordinate per axis")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("density field contains non-finite values")

    @classmethod
    def on_domain(cls, lower, upper, dx: float, dims: int = 1) -> "DensityField":
        """Zero field on [lower, upper)^dims with cell centres offset by dx/2."""
        n = int(round((upper - lower) / dx))
        if not math.isclose(n * dx, upper - lower, rel_tol=1e-9):
            raise ValueError(f"dx = {dx} does not divide the domain length {upper - lower}")
        shape = (n,) * dims
        origin = (lower + 0.5 * dx,) * dims
        return cls(np.zeros(shape), dx, origin)

    @property
    def dims(self) -> int:
        return self.data.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dims

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(n * self.dx for n in self.shape)

    def axes(self) -> list[np.ndarray]:
        return [o + self.dx * np.arange(n) for o, n in zip(self.origin, self.shape)]

    def coordinates(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``data.shape + (dims,)``."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids, axis=-1)

    def with_data(self, data: np.ndarray) -> "DensityField":
        return DensityField(np.array(data, dtype=float), self.dx, self.origin)

    def copy(self) -> "DensityField":
        return self.with_data(self.data.copy())


@dataclass
class SupportComponents:
    threshold: float
    components: list[np.ndarray]  # each an (n_cells, dims) array of integer cell indices

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def masks(self, shape) -> list[np.ndarray]:
        out = []
        for comp in self.components:
            mask = np.zeros(shape, dtype=bool)
            mask[tuple(comp.T)] = True
            out.append(mask)
        return out


def total_mass(f: DensityField) -> float:
    return float(np.sum(f.data) * f.cell_volume)


def lp_norm(f: DensityField, p: float) -> float:
    if math.isinf(p):
        return float(np.max(np.abs(f.data)))
    if p < 1:
        raise ValueError("p must be >= 1")
    return float((np.sum(np.abs(f.data) ** p) * f.cell_volume) ** (1.0 / p))


def default_threshold(f: DensityField) -> float:
    return 1e-3 * float(np.max(f.data))


def support_components(f: DensityField, threshold: float | None = None) -> SupportComponents:
    """Connected pieces of {value > threshold} with periodic adjacency.

    1D uses interval adjacency, 2D uses 4-connectivity. Components are sorted
    by their leftmost (then bottom-most) cell in unwrapped order.
    """
    if threshold is None:
        threshold = default_threshold(f)
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    mask = f.data > threshold
    labels, count = ndimage.label(mask)
    if count == 0:
        return SupportComponents(threshold, [])

    parent = list(range(count + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for axis in range(f.dims):
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        for a, b in zip(np.atleast_1d(first).ravel(), np.atleast_1d(last).ravel()):
            if a and b:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    roots = np.array([find(i) for i in range(count + 1)])
    merged = roots[labels]
    merged[~mask] = 0

    comps = []
    for root in np.unique(merged[merged > 0]):
        idx = np.argwhere(merged == root)
        comps.append(_unwrap_start(idx, f.shape))
    comps.sort(key=lambda c: tuple(c[0]))
    return SupportComponents(threshold, [c[1] for c in comps])


def _unwrap_start(idx: np.ndarray, shape) -> tuple[tuple, np.ndarray]:
    """Sort key for a component: its first cell after undoing periodic wrap."""
    key = []
    for axis, n in enumerate(shape):
        occupied = np.zeros(n, dtype=bool)
        occupied[idx[:, axis]] = True
        if occupied.all():
            key.append(0)
            continue
        # Start just after the largest empty run along this axis.
        empty = np.flatnonzero(~occupied)
        gaps = np.diff(np.concatenate([empty, [empty[0] + n]]))
        k = int(np.argmax(gaps))
        key.append(int((empty[k] + 1) % n))
    return tuple(key), idx


def periodic_offsets(a: np.ndarray, b: np.ndarray, shape, dx: float) -> np.ndarray:
    """Minimum-image displacement vectors between all cells of ``a`` and ``b``."""
    diff = a[:, None, :] - b[None, :, :]
    n = np.asarray(shape)
    diff = (diff + n // 2) % n - n // 2
    return diff * dx


def component_gap(a: np.ndarray, b: np.ndarray, f: DensityField) -> float:
    """Smallest periodic distance between cell centres of two components."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape == b.shape and np.array_equal(np.sort(a, axis=0), np.sort(b, axis=0)):
        raise ValueError("component_gap needs two distinct components")
    best = math.inf
    # Chunk the pairwise computation to bound memory on large 2D components.
    chunk = max(1, 2_000_000 // max(len(b), 1))
    for start in range(0, len(a), chunk):
        d = periodic_offsets(a[start : start + chunk], b, f.shape, f.dx)
        best = min(best, float(np.min(np.sqrt(np.sum(d * d, axis=-1)))))
    return best


def component_diameter(c: np.ndarray, f: DensityField) -> float:
    if len(c) < 2:
        return 0.0
    d = periodic_offsets(c, c, f.shape, f.dx)
    return float(np.max(np.sqrt(np.sum(d * d, axis=-1))))


def unwrapped_coordinates(c: np.ndarray, f: DensityField) -> np.ndarray:
    """Cell-centre coordinates of a component, unwrapped so it is contiguous.

    Each axis is cut at the largest run of unoccupied indices. An axis the
    component fully covers is left as is.
    """
    c = np.asarray(c)
    idx = c.astype(float).copy()
    for axis, n in enumerate(f.shape):
        occupied = np.zeros(n, dtype=bool)
        occupied[c[:, axis]] = True
        if occupied.all():
            continue
        empty = np.flatnonzero(~occupied)
        gaps = np.diff(np.concatenate([empty, [empty[0] + n]]))
        start = (empty[int(np.argmax(gaps))] + 1) % n
        idx[:, axis] = (c[:, axis] - start) % n + start
    return idx * f.dx + np.asarray(f.origin)


# -- serialization -----------------------------------------------------------

def write_field_csv(f: DensityField, path) -> None:
    shape = "x".join(str(n) for n in f.shape)
    origin = "x".join(repr(o) for o in f.origin)
    with open(path, "w") as fh:
        fh.write("# dims,shape,dx,origin\n")
        fh.write(f"# {f.dims},{shape},{f.dx!r},{origin}\n")
        if f.dims == 1:
            for v in f.data:
                fh.write(f"{float(v)!r}\n")
        else:
            for row in f.data:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_field_csv(path) -> DensityField:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("#") or not lines[1].startswith("#"):
        raise ValueError(f"{path}: missing '# dims,shape,dx,origin' header")
    dims_s, shape_s, dx_s, origin_s = (t.strip() for t in lines[1][1:].split(","))
    dims = int(dims_s)
    shape = tuple(int(n) for n in shape_s.split("x"))
    origin = tuple(float(o) for o in origin_s.split("x"))
    rows = [ln for ln in lines[2:] if ln.strip()]
    if dims == 1:
        data = np.array([float(v) for v in rows])
    else:
        data = np.array([[float(v) for v in row.split(",")] for row in rows])
    if data.shape != shape or len(shape) != dims:
        raise ValueError(f"{path}: header shape {shape} does not match data {data.shape}")
    return DensityField(data, float(dx_s), origin)


def write_pgm(f: DensityField, path) -> None:
    """8-bit binary PGM of a 2D field, scaled by its maximum."""
    if f.dims != 2:
        raise ValueError("PGM export needs a 2D field")
    peak = float(np.max(f.data))
    scaled = np.zeros(f.shape) if peak <= 0 else np.clip(f.data / peak, 0.0, 1.0)
    # Row 0 of the image is the top, i.e. the largest y index.
    img = np.round(255 * scaled.T[::-1]).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
