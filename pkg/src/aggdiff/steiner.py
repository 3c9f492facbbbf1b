"""Continuous Steiner symmetrization of interval unions and step functions.

Intervals are stored as (offset c from the anchor, half-width r) in exact
rational arithmetic, so event times and measures carry no round-off. The
interaction energy of two symmetrized indicator functions and its one-sided
derivative are evaluated by one-dimensional quadrature of the kernel against
the overlap length of the two intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .kernels import COMPACT, Kernel

QUAD_RTOL = 1e-12
QUAD_ATOL = 1e-15


class InvalidUnionError(ValueError):
    pass


class EventBoundaryError(ValueError):
    """Raised when a derivative is requested at or past a stop or merge event."""


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("interval data must be finite")
    return Fraction(x)


def _sgn(x) -> int:
    return (x > 0) - (x < 0)


# -- interval unions ---------------------------------------------------------


@dataclass(frozen=True)
class IntervalUnion:
    """Finite union of open intervals (anchor + c - r, anchor + c + r).

    Intervals are sorted by left endpoint and may touch but not overlap.
    """

    anchor: Fraction
    intervals: tuple[tuple[Fraction, Fraction], ...]

    def __init__(self, anchor, intervals: Iterable[tuple]):
        ivs = sorted(((_frac(c), _frac(r)) for c, r in intervals), key=lambda cr: cr[0] - cr[1])
        for c, r in ivs:
            if r <= 0:
                raise InvalidUnionError(f"half-width must be positive, got {float(r)}")
        for (c1, r1), (c2, r2) in zip(ivs, ivs[1:]):
            if c1 + r1 > c2 - r2:
                raise InvalidUnionError(
                    f"intervals ({float(c1 - r1)}, {float(c1 + r1)}) and ({float(c2 - r2)}, {float(c2 + r2)}) overlap"
                )
        object.__setattr__(self, "anchor", _frac(anchor))
        object.__setattr__(self, "intervals", tuple(ivs))

    @classmethod
    def from_bounds(cls, anchor, bounds: Iterable[tuple]) -> "IntervalUnion":
        a0 = _frac(anchor)
        out = []
        for a, b in bounds:
            a, b = _frac(a), _frac(b)
            out.append(((a + b) / 2 - a0, (b - a) / 2))
        return cls(a0, out)

    @property
    def measure(self) -> Fraction:
        return sum((2 * r for _, r in self.intervals), Fraction(0))

    def bounds(self) -> list[tuple[float, float]]:
        """Absolute endpoints as floats."""
        return [(float(self.anchor + c - r), float(self.anchor + c + r)) for c, r in self.intervals]

    def exact_bounds(self) -> list[tuple[Fraction, Fraction]]:
        return [(self.anchor + c - r, self.anchor + c + r) for c, r in self.intervals]

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for a, b in self.bounds():
            out |= (x > a) & (x < b)
        return out

    def __len__(self):
        return len(self.intervals)


def _merge_touching(ivs: list[list[Fraction]]) -> list[list[Fraction]]:
    out: list[list[Fraction]] = []
    for c, r in ivs:
        if out:
            pc, pr = out[-1]
            if pc + pr == c - r:
                a, b = pc - pr, c + r
                out[-1] = [(a + b) / 2, (b - a) / 2]
                continue
        out.append([c, r])
    return out


def _next_event(ivs: list[list[Fraction]]) -> Fraction | None:
    """Time until the next stop (centre reaches 0) or contact (shared endpoint)."""
    best = None
    vel = [-_sgn(c) for c, _ in ivs]
    for (c, _), v in zip(ivs, vel):
        if v != 0:
            t = abs(c)
            best = t if best is None else min(best, t)
    for i in range(len(ivs) - 1):
        closing = vel[i] - vel[i + 1]
        if closing > 0:
            gap = (ivs[i + 1][0] - ivs[i + 1][1]) - (ivs[i][0] + ivs[i][1])
            t = gap / closing
            best = t if best is None else min(best, t)
    return best


def symmetrize_union(u: IntervalUnion, tau) -> IntervalUnion:
    """M^tau(U): centres move toward the anchor at unit speed and stop there.

    Two intervals that come to share an endpoint merge into one interval,
    which then moves as a whole. Events are processed exactly.
    """
    tau = _frac(tau)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    ivs = _merge_touching([[c, r] for c, r in u.intervals])
    t = Fraction(0)
    while True:
        step = _next_event(ivs)
        remaining = tau - t
        move = remaining if step is None or step > remaining else step
        if move > 0:
            for iv in ivs:
                iv[0] -= _sgn(iv[0]) * move
            t += move
        if step is None or step > remaining:
            break
        ivs = _merge_touching(ivs)
        if t == tau and _next_event(ivs) != 0:
            break
    return IntervalUnion(u.anchor, [tuple(iv) for iv in ivs])


def first_event_time(u: IntervalUnion) -> Fraction | None:
    return _next_event(_merge_touching([[c, r] for c, r in u.intervals]))


# -- step functions ------------------------------------------------------------


@dataclass(frozen=True)
class LayerFunction:
    """Layer-cake form of a nonnegative step function.

    ``layers[k] = (thickness, U)`` with U the superlevel set shared by every
    height in the k-th slab. Layers run bottom to top and must be nested.
    """

    layers: tuple[tuple[Fraction, IntervalUnion], ...]

    def __init__(self, layers: Iterable[tuple]):
        lay = tuple((_frac(dh), u) for dh, u in layers)
        for dh, _ in lay:
            if dh <= 0:
                raise InvalidUnionError("layer thickness must be positive")
        for (_, low), (_, high) in zip(lay, lay[1:]):
            if not _nested(high, low):
                raise InvalidUnionError("layers are not nested: an upper superlevel set leaves a lower one")
        object.__setattr__(self, "layers", lay)

    @classmethod
    def from_samples(cls, values, dx, origin=0.0, anchor=0.0) -> "LayerFunction":
        """Step function equal to values[i] on (origin + (i - 1/2) dx, origin + (i + 1/2) dx)."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("samples must be finite and nonnegative")
        dxf, x0 = _frac(dx), _frac(origin)
        levels = sorted({_frac(v) for v in values if v > 0})
        layers = []
        below = Fraction(0)
        for h in levels:
            mask = np.array([_frac(v) >= h for v in values])
            bounds = []
            i = 0
            while i < len(mask):
                if mask[i]:
                    j = i
                    while j + 1 < len(mask) and mask[j + 1]:
                        j += 1
                    bounds.append((x0 + (i - Fraction(1, 2)) * dxf, x0 + (j + Fraction(1, 2)) * dxf))
                    i = j + 1
                else:
                    i += 1
            layers.append((h - below, IntervalUnion.from_bounds(anchor, bounds)))
            below = h
        return cls(layers)

    @classmethod
    def _unchecked(cls, layers) -> "LayerFunction":
        # Layers moved with layer-dependent speeds need not stay nested.
        self = cls.__new__(cls)
        object.__setattr__(self, "layers", tuple(layers))
        return self

    @property
    def heights(self) -> list[Fraction]:
        """Top of each layer."""
        out, h = [], Fraction(0)
        for dh, _ in self.layers:
            h += dh
            out.append(h)
        return out

    def integral(self) -> Fraction:
        return sum((dh * u.measure for dh, u in self.layers), Fraction(0))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for dh, u in self.layers:
            out += float(dh) * u.contains(x)
        return out


def _nested(inner: IntervalUnion, outer: IntervalUnion) -> bool:
    ob = outer.exact_bounds()
    for a, b in inner.exact_bounds():
        if not any(oa <= a and b <= ob_ for oa, ob_ in ob):
            return False
    return True


def plateau_speed(h0: float, m: float) -> Callable[[float], float]:
    """v(h) = 1 for h >= h0 and (h/h0)^(m-1) below: thin layers move slowly."""
    if not h0 > 0:
        raise ValueError("h0 must be positive")

    def v(h):
        return 1.0 if h >= h0 else (h / h0) ** (m - 1.0)

    return v


def symmetrize_function(f: LayerFunction, tau, speed: Callable[[float], float] | None = None) -> LayerFunction:
    """S^tau f, layer by layer; with ``speed`` the layer of top height h uses time v(h) tau."""
    tau = _frac(tau)
    out = []
    for (dh, u), h in zip(f.layers, f.heights):
        t = tau if speed is None else _frac(float(speed(float(h))) * float(tau))
        out.append((dh, symmetrize_union(u, t)))
    return LayerFunction._unchecked(out)


def rearrangement_profile(values) -> np.ndarray:
    """Sample values sorted in decreasing order: the symmetric decreasing
    rearrangement takes values[k] on the band 2|x - anchor| in (k dx, (k + 1) dx]."""
    return np.sort(np.asarray(values, dtype=float))[::-1]


# -- kernels and interaction energy ------------------------------------------


@dataclass(frozen=True)
class Kernel1D:
    """Even kernel K on the line with K' < 0 on (0, R) and K' = 0 beyond R."""

    profile: Callable = None
    derivative: Callable = None
    support: float = 1.0
    name: str = "K"

    def __call__(self, z):
        return self.profile(np.asarray(z, dtype=float))

    def prime(self, z):
        return self.derivative(np.asarray(z, dtype=float))

    def check(self, samples: int = 100) -> bool:
        """Evenness and the sign pattern of K' on sample points."""
        z = np.linspace(0.0, self.support, samples + 2)[1:-1]
        even = np.allclose(self(z), self(-z), rtol=1e-12, atol=1e-14)
        decreasing = bool(np.all(self.prime(z) < 0))
        outside = np.linspace(self.support, 2 * self.support + 1, samples)
        flat = bool(np.all(self.prime(outside) == 0) and np.all(self.prime(-outside) == 0))
        return even and decreasing and flat


def make_k_slice(k: Kernel, l: float) -> Kernel1D:
    """K_l(z) = -W(sqrt(z^2 + l^2)) / 2 with range R = sqrt(1 - l^2)."""
    if k.kind != COMPACT or abs(k.support_radius - 1.0) > 1e-12:
        raise ValueError("slices need a compact kernel with support radius 1")
    if not 0 <= l < 1:
        raise ValueError(f"slice offset must lie in [0, 1), got {l}")
    R = math.sqrt(1.0 - l * l)

    def profile(z):
        rho = np.sqrt(z * z + l * l)
        return -0.5 * k.profile(rho)

    def derivative(z):
        rho = np.sqrt(z * z + l * l)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rho > 0, z / np.where(rho > 0, rho, 1.0), 0.0)
        return np.where(np.abs(z) < R, -0.5 * k.derivative(rho) * ratio, 0.0)

    return Kernel1D(profile, derivative, R, f"{k.name}_slice_{l:g}")


def make_quartic_cap(R: float = 1.0) -> Kernel1D:
    """K(z) = (1 - (z/R)^2)^2 on |z| < R, zero outside; C^1 with K' < 0 on (0, R)."""
    if not R > 0:
        raise ValueError("R must be positive")

    def profile(z):
        s = 1.0 - (z / R) ** 2
        return np.where(np.abs(z) < R, s * s, 0.0)

    def derivative(z):
        s = 1.0 - (z / R) ** 2
        return np.where(np.abs(z) < R, -4.0 * z / R**2 * s, 0.0)

    return Kernel1D(profile, derivative, R, f"quartic_{R:g}")


def kernel_line(k: Kernel) -> Kernel1D:
    """The full 1D kernel W(|z|) as a Kernel1D (attractive, so K' > 0 on (0, R))."""

    def profile(z):
        return k.profile(np.abs(z))

    def derivative(z):
        return np.sign(z) * k.derivative(np.abs(z))

    return Kernel1D(profile, derivative, k.effective_radius, k.name)


def _overlap(z, a1, b1, a2, b2):
    """Length of {x in [a1, b1] : x - z in [a2, b2]}."""
    return np.maximum(0.0, np.minimum(b1, b2 + z) - np.maximum(a1, a2 + z))


def _pair_integral(g: Callable, reach: float, a1, b1, a2, b2) -> float:
    """Integral over [a1, b1] x [a2, b2] of g(x - y), reduced to one dimension."""
    lo = max(a1 - b2, -reach)
    hi = min(b1 - a2, reach)
    if not hi > lo:
        return 0.0
    pts = sorted({lo, hi, *(p for p in (a1 - a2, b1 - b2, 0.0, -reach, reach) if lo < p < hi)})
    total = 0.0
    for p, q in zip(pts, pts[1:]):
        val, _ = quad(
            lambda z: float(g(z)) * float(_overlap(z, a1, b1, a2, b2)),
            p,
            q,
            epsabs=QUAD_ATOL,
            epsrel=QUAD_RTOL,
            limit=200,
        )
        total += val
    return total


def union_interaction(u1: IntervalUnion, u2: IntervalUnion, K: Kernel1D) -> float:
    """Double integral of K(x - y) over U1 x U2."""
    return sum(
        _pair_integral(K.profile, K.support, a1, b1, a2, b2) for a1, b1 in u1.bounds() for a2, b2 in u2.bounds()
    )


def interaction_energy(u1: IntervalUnion, u2: IntervalUnion, K: Kernel1D, tau) -> float:
    """I_K(tau): interaction of the indicators of M^tau(U1) and M^tau(U2)."""
    return union_interaction(symmetrize_union(u1, tau), symmetrize_union(u2, tau), K)


def _single(u: IntervalUnion) -> tuple[Fraction, Fraction]:
    if len(u) != 1:
        raise ValueError("the derivative formula needs single-interval unions")
    return u.intervals[0]


def _check_before_event(u1, u2, tau) -> None:
    tau = _frac(tau)
    for u in (u1, u2):
        c, _ = _single(u)
        if c != 0 and tau >= abs(c):
            raise EventBoundaryError(f"tau = {float(tau)} is at or past the stop time {float(abs(c))}")


def interaction_derivative(u1: IntervalUnion, u2: IntervalUnion, K: Kernel1D, tau=0) -> float:
    """Right derivative of I_K at tau: (sgn c2 - sgn c1) times the integral of K'(x - y) over Q.

    Q = [c1 - r1, c1 + r1] x [c2 - r2, c2 + r2] uses the centres at time tau.
    """
    if _frac(u1.anchor) != _frac(u2.anchor):
        raise ValueError("both unions must share the anchor")
    _check_before_event(u1, u2, tau)
    c1, r1 = _single(symmetrize_union(u1, tau))
    c2, r2 = _single(symmetrize_union(u2, tau))
    factor = _sgn(c2) - _sgn(c1)
    if factor == 0:
        return 0.0
    c1, r1, c2, r2 = float(c1), float(r1), float(c2), float(r2)
    return factor * _pair_integral(K.derivative, K.support, c1 - r1, c1 + r1, c2 - r2, c2 + r2)


def finite_difference_derivative(u1, u2, K: Kernel1D, tau=0, delta: float | None = None, levels: int = 4) -> float:
    """Forward differences of I_K with Richardson extrapolation over halved steps."""
    _check_before_event(u1, u2, tau)
    tau = float(tau)
    horizon = min(
        (abs(float(c)) - tau for u in (u1, u2) for c, _ in u.intervals if c != 0),
        default=math.inf,
    )
    if delta is None:
        delta = min(1e-3, 0.25 * horizon) if math.isfinite(horizon) else 1e-3
    if tau + delta >= tau + horizon:
        raise EventBoundaryError("finite-difference step would cross a stop event")
    base = interaction_energy(u1, u2, K, tau)
    table = []
    for j in range(levels):
        h = delta / 2**j
        table.append((interaction_energy(u1, u2, K, tau + h) - base) / h)
    # Forward differences have errors in powers h, h^2, ...
    for order in range(1, levels):
        table = [(2**order * table[i + 1] - table[i]) / (2**order - 1) for i in range(len(table) - 1)]
    return table[0]


@dataclass(frozen=True)
class DerivativeRoutes:
    closed_form: float
    finite_difference: float
    scale: float

    @property
    def discrepancy(self) -> float:
        return abs(self.closed_form - self.finite_difference)

    def agree(self, rtol: float = 1e-6, atol: float = 1e-9) -> bool:
        bound = rtol * max(abs(self.closed_form), abs(self.finite_difference)) + atol * max(1.0, self.scale)
        return self.discrepancy <= bound


def derivative_routes(u1, u2, K: Kernel1D, tau=0) -> DerivativeRoutes:
    """The one-sided derivative by the rectangle formula and by finite differences."""
    return DerivativeRoutes(
        interaction_derivative(u1, u2, K, tau),
        finite_difference_derivative(u1, u2, K, tau),
        abs(interaction_energy(u1, u2, K, tau)),
    )


def phi(c1: float, r1: float, c2: float, r2: float, R: float) -> float:
    """min{|c2 - c1| + R - |r1 - r2|, r1 + r2 + R - |c2 - c1|, R}."""
    d = abs(c2 - c1)
    return min(-abs(r1 - r2) + d + R, -d + r1 + r2 + R, R)


def overlap_condition(c1, r1, c2, r2, R) -> bool:
    """|c2 - c1| < r1 + r2 + R and |r2 - r1| < |c2 - c1| + R."""
    d = abs(c2 - c1)
    return d < r1 + r2 + R and abs(r2 - r1) < d + R


def slope_floor(K: Kernel1D, samples: int = 2001) -> float:
    """min of |K'(r)| for r in [R/(3 sqrt 2), R/sqrt 2]."""
    lo, hi = K.support / (3 * math.sqrt(2)), K.support / math.sqrt(2)
    r = np.linspace(lo, hi, samples)
    mag = np.abs(K.prime(r))
    i = int(np.argmin(mag))
    a, b = r[max(i - 1, 0)], r[min(i + 1, samples - 1)]
    if b > a:
        res = minimize_scalar(lambda s: abs(float(K.prime(s))), bounds=(a, b), method="bounded")
        return float(min(mag[i], res.fun))
    return float(mag[i])


def lemma_bound(c1, r1, c2, r2, K: Kernel1D, floor: float | None = None) -> float:
    """(1/6) phi(c1, r1, c2, r2, R) * min |K'| on [R/(3 sqrt 2), R/sqrt 2]."""
    if floor is None:
        floor = slope_floor(K)
    return phi(c1, r1, c2, r2, K.support) * floor / 6.0


# -- energy along the symmetrization -------------------------------------------


@dataclass(frozen=True)
class EnergySeries:
    taus: np.ndarray
    energies: np.ndarray
    tol: float = 1e-9

    @property
    def monotone(self) -> bool:
        """Non-increasing up to tol relative to the energy scale."""
        scale = max(1.0, float(np.max(np.abs(self.energies))))
        return bool(np.all(np.diff(self.energies) <= self.tol * scale))


def layer_interaction(f: LayerFunction, K: Kernel1D) -> float:
    """(1/2) double integral of f(x) f(y) K(x - y), summed exactly over layer pairs."""
    total = 0.0
    for i, (dh_i, u_i) in enumerate(f.layers):
        for j in range(i, len(f.layers)):
            dh_j, u_j = f.layers[j]
            weight = float(dh_i) * float(dh_j) * (1.0 if i == j else 2.0)
            total += weight * union_interaction(u_i, u_j, K)
    return 0.5 * total


def energy_decrease_demo(f: LayerFunction, k: Kernel, tau_max: float, samples: int = 41) -> EnergySeries:
    """I[S^tau f] with the attractive kernel W on a uniform tau grid; should never increase."""
    if not tau_max >= 0:
        raise ValueError("tau_max must be nonnegative")
    line = kernel_line(k)
    taus = np.linspace(0.0, tau_max, samples)
    energies = np.array([layer_interaction(symmetrize_function(f, t), line) for t in taus])
    return EnergySeries(taus, energies)


# -- property suite ------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: int
    total: int
    worst: float = 0.0

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.passed}/{self.total} (worst {self.worst:.3e})"


def admissible_kernels() -> list[Kernel1D]:
    from .kernels import make_bump_kernel

    bump = make_bump_kernel()
    return [make_k_slice(bump, l) for l in (0.0, 0.3, 0.6, 0.8)] + [make_quartic_cap(R) for R in (0.5, 1.0, 2.0)]


def _random_union(rng: np.random.Generator, n_max: int = 5) -> IntervalUnion:
    n = int(rng.integers(1, n_max + 1))
    widths = rng.uniform(0.05, 1.5, n)
    gaps = rng.uniform(0.0, 1.5, n)
    gaps[rng.uniform(size=n) < 0.2] = 0.0  # some intervals start out touching
    start = rng.uniform(-4.0, 0.0)
    bounds, x = [], start
    for w, g in zip(widths, gaps):
        x += g
        bounds.append((x, x + w))
        x += w
    return IntervalUnion.from_bounds(rng.uniform(-2.0, 2.0), bounds)


def _random_pair(rng, K: Kernel1D, opposite: bool | None = None):
    scale = K.support
    c1 = rng.uniform(-2.0, 2.0) * scale
    c2 = rng.uniform(-2.0, 2.0) * scale
    if opposite is True and _sgn(c1) == _sgn(c2):
        c2 = -c2
    r1 = rng.uniform(0.02, 1.5) * scale
    r2 = rng.uniform(0.02, 1.5) * scale
    return c1, r1, c2, r2


def _random_steps(rng, cells: int = 24, levels: int = 4) -> np.ndarray:
    heights = np.round(rng.uniform(0.1, 2.0, levels), 3)
    vals = rng.choice(np.concatenate([[0.0], heights]), size=cells)
    if not np.any(vals > 0):
        vals[cells // 2] = heights[0]
    return vals


def run_property_suite(
    seed: int = 0,
    n_pairs: int = 10_000,
    n_tuples: int = 1_000,
    n_routes: int = 200,
    n_functions: int = 100,
    n_unions: int = 1_000,
) -> list[CheckResult]:
    """Randomized checks of the symmetrization and of the energy derivative bounds."""
    rng = np.random.default_rng(seed)
    kernels = admissible_kernels()
    floors = [slope_floor(K) for K in kernels]
    results = []

    # measure preservation and the semigroup law on random unions
    ok_measure = ok_group = 0
    for _ in range(n_unions):
        u = _random_union(rng)
        t1, t2 = (_frac(round(float(x), 6)) for x in rng.uniform(0.0, 3.0, 2))
        a = symmetrize_union(u, t1)
        ok_measure += a.measure == u.measure
        ok_group += symmetrize_union(a, t2).intervals == symmetrize_union(u, t1 + t2).intervals
    results.append(CheckResult("measure preservation", ok_measure, n_unions))
    results.append(CheckResult("semigroup composition", ok_group, n_unions))

    # d+I/dtau(0) >= 0 on random single-interval pairs
    passed, worst = 0, 0.0
    for _ in range(n_pairs):
        K = kernels[int(rng.integers(len(kernels)))]
        c1, r1, c2, r2 = _random_pair(rng, K)
        d = interaction_derivative(IntervalUnion(0, [(c1, r1)]), IntervalUnion(0, [(c2, r2)]), K)
        passed += d >= -1e-9
        worst = min(worst, d)
    results.append(CheckResult("derivative nonnegative", passed, n_pairs, worst))

    # quantitative bound on pairs with opposite centres and overlapping range
    passed, worst = 0, math.inf
    done = 0
    while done < n_tuples:
        i = int(rng.integers(len(kernels)))
        K = kernels[i]
        c1, r1, c2, r2 = _random_pair(rng, K, opposite=True)
        if not overlap_condition(c1, r1, c2, r2, K.support):
            continue
        done += 1
        d = interaction_derivative(IntervalUnion(0, [(c1, r1)]), IntervalUnion(0, [(c2, r2)]), K)
        bound = lemma_bound(c1, r1, c2, r2, K, floors[i])
        passed += d >= bound
        worst = min(worst, d / bound)
    results.append(CheckResult("quantitative lower bound", passed, n_tuples, worst))

    # rectangle formula against finite differences
    passed, worst = 0, 0.0
    for _ in range(n_routes):
        K = kernels[int(rng.integers(len(kernels)))]
        c1, r1, c2, r2 = _random_pair(rng, K)
        routes = derivative_routes(IntervalUnion(0, [(c1, r1)]), IntervalUnion(0, [(c2, r2)]), K)
        passed += routes.agree()
        scale = max(abs(routes.closed_form), 1e-3 * max(1.0, routes.scale))
        worst = max(worst, routes.discrepancy / scale)
    results.append(CheckResult("derivative routes agree", passed, n_routes, worst))

    # step functions: mass, large-tau limit, layer-cake consistency
    ok_mass = ok_limit = ok_cake = 0
    worst = 0.0
    for _ in range(n_functions):
        vals = _random_steps(rng)
        dx = 0.5
        anchor = float(rng.uniform(-3.0, 3.0))
        f = LayerFunction.from_samples(vals, dx, origin=-0.5 * dx * (len(vals) - 1), anchor=anchor)
        tau = float(rng.uniform(0.0, 4.0))
        s = symmetrize_function(f, tau)
        ok_mass += s.integral() == f.integral()

        far = symmetrize_function(f, 2 * len(vals) * dx + 10.0)
        target = rearrangement_profile(vals)
        band = (np.arange(len(vals)) + 0.5) * dx / 2
        err = max(np.max(np.abs(far(anchor + band) - target)), np.max(np.abs(far(anchor - band) - target)))
        worst = max(worst, float(err))
        ok_limit += err <= 1e-12

        ok_cake += _layer_cake_matches(vals, dx, anchor, tau, s)
    results.append(CheckResult("mass preservation", ok_mass, n_functions))
    results.append(CheckResult("large-tau rearrangement", ok_limit, n_functions, worst))
    results.append(CheckResult("layer-cake consistency", ok_cake, n_functions))
    return results


def _layer_cake_matches(vals, dx, anchor, tau, s: LayerFunction) -> bool:
    """Rebuild S^tau f from independently symmetrized superlevel sets and compare."""
    origin = -0.5 * dx * (len(vals) - 1)
    levels = np.unique(vals[vals > 0])
    probes = np.linspace(origin - 20, origin + len(vals) * dx + 20, 4001) + 1e-7
    direct = np.zeros_like(probes)
    below = 0.0
    for h in levels:
        cells = np.flatnonzero(vals >= h)
        bounds = [(origin + (i - 0.5) * dx, origin + (i + 0.5) * dx) for i in cells]
        # unions of adjacent cells are touching intervals and merge at tau = 0
        u = IntervalUnion.from_bounds(anchor, bounds)
        direct += (h - below) * symmetrize_union(u, tau).contains(probes)
        below = h
    return bool(np.allclose(direct, s(probes), rtol=0, atol=1e-12))
