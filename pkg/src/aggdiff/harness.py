"""Experiment configuration, initial data, single runs and mass sweeps.

Configuration files use INI syntax and every key has a default. See
README.md for the full key list.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .convolution import build_stencil
from .grid import DensityField, support_components, total_mass, write_field_csv, write_pgm
from .integrator import SimParams, Trajectory, run_to_stationary
from .kernels import Kernel, kernel_by_name
from .stationary import StationaryReport, analyze

log = logging.getLogger(__name__)

INITIAL_KINDS = ("box", "boxes", "random", "constant")
MASS_RTOL = 1e-12


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending section and key."""


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "box"
    mass: float = 40.0
    half_width: float = 10.0
    center: float = 0.0
    count: int = 3
    seed: int = 0
    fraction: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    kernel: str = "bump"
    kernel_table: str | None = None
    truncation: float | None = None
    m: float = 3.0
    epsilon: float = 1.0
    dims: int = 1
    dx: float = 0.4
    domain: tuple[float, float] | None = None
    dt: float | None = None
    steady_tol: float = 1e-7
    max_steps: int = 200_000
    cfl_safety: float = 0.9
    initial: InitialSpec = field(default_factory=InitialSpec)
    output: str | None = None
    snapshot_every: int = 0
    sweep: tuple[tuple[float, float, str | None], ...] = ()
    workers: int = 1

    def make_kernel(self) -> Kernel:
        return kernel_by_name(self.kernel, self.dims, self.kernel_table)

    def params(self) -> SimParams:
        return SimParams(
            m=self.m,
            epsilon=self.epsilon,
            dt=self.dx if self.dt is None else self.dt,
            steady_tol=self.steady_tol,
            max_steps=self.max_steps,
            cfl_safety=self.cfl_safety,
        )

    def resolved_domain(self, k: Kernel | None = None) -> tuple[float, float]:
        """Explicit domain, else [-40, 40] in 1D and [-20, 20] per axis in 2D,
        widened to the smallest even cell count spanning 4 kernel radii."""
        if self.domain is not None:
            return self.domain
        half = 40.0 if self.dims == 1 else 20.0
        k = self.make_kernel() if k is None else k
        need = 4.0 * k.effective_radius
        if 2 * half < need:
            cells = 2 * math.ceil(need / (2 * self.dx))
            half = 0.5 * cells * self.dx
        return (-half, half)

    def point(self, m: float, mass: float, kernel: str | None = None) -> "ExperimentConfig":
        return replace(
            self, m=m, kernel=kernel or self.kernel, initial=replace(self.initial, mass=mass), sweep=()
        )


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _pair(raw: str) -> tuple[float, float]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ValueError("expected two numbers 'lower, upper'")
    return float(parts[0]), float(parts[1])


def _sweep_points(raw: str) -> tuple[tuple[float, float, str | None], ...]:
    """'2.1:40, exponential:3:40' -> ((2.1, 40.0, None), (3.0, 40.0, 'exponential'))."""
    points = []
    for item in raw.replace("\n", ",").split(","):
        item = item.strip()
        if not item:
            continue
        parts = [t.strip() for t in item.split(":")]
        if len(parts) == 2:
            points.append((float(parts[0]), float(parts[1]), None))
        elif len(parts) == 3:
            points.append((float(parts[1]), float(parts[2]), parts[0]))
        else:
            raise ValueError(f"sweep point {item!r} must read 'm:M' or 'kernel:m:M'")
    return tuple(points)


def _numbers(raw: str) -> list[float]:
    return [float(v) for v in raw.replace(",", " ").split()]


def _names(raw: str) -> list[str]:
    return raw.replace(",", " ").split()


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = {"kernel", "model", "grid", "time", "initial", "output", "sweep"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(known)}")

    table = _get(parser, "kernel", "table", str, None)
    if table is not None and base_dir is not None and not Path(table).is_absolute():
        table = str(base_dir / table)
    init = InitialSpec(
        kind=_get(parser, "initial", "type", str, "box"),
        mass=_get(parser, "initial", "mass", float, 40.0),
        half_width=_get(parser, "initial", "half_width", float, 10.0),
        center=_get(parser, "initial", "center", float, 0.0),
        count=_get(parser, "initial", "count", int, 3),
        seed=_get(parser, "initial", "seed", int, 0),
        fraction=_get(parser, "initial", "fraction", float, 1.0),
    )
    sweep_points = _get(parser, "sweep", "points", _sweep_points, ())
    if parser.has_section("sweep") and (parser.has_option("sweep", "m") or parser.has_option("sweep", "mass")):
        ms = _get(parser, "sweep", "m", _numbers, [])
        masses = _get(parser, "sweep", "mass", _numbers, [])
        if not ms:
            raise ConfigError("[sweep] m: list is empty or missing (needed alongside 'mass')")
        if not masses:
            raise ConfigError("[sweep] mass: list is empty or missing (needed alongside 'm')")
        kernels = _get(parser, "sweep", "kernels", _names, [None])
        sweep_points = sweep_points + tuple((m, M, k) for k in kernels for m in ms for M in masses)
    cfg = ExperimentConfig(
        kernel=_get(parser, "kernel", "name", str, "bump"),
        kernel_table=table,
        truncation=_get(parser, "kernel", "truncation", float, None),
        m=_get(parser, "model", "m", float, 3.0),
        epsilon=_get(parser, "model", "epsilon", float, 1.0),
        dims=_get(parser, "grid", "dims", int, 1),
        dx=_get(parser, "grid", "dx", float, 0.4),
        domain=_get(parser, "grid", "domain", _pair, None),
        dt=_get(parser, "time", "dt", float, None),
        steady_tol=_get(parser, "time", "steady_tol", float, 1e-7),
        max_steps=_get(parser, "time", "max_steps", int, 200_000),
        cfl_safety=_get(parser, "time", "cfl_safety", float, 0.9),
        initial=init,
        output=_get(parser, "output", "directory", str, None),
        snapshot_every=_get(parser, "output", "snapshot_every", int, 0),
        sweep=sweep_points,
        workers=_get(parser, "sweep", "workers", int, 1),
    )
    if parser.has_section("sweep") and not cfg.sweep:
        raise ConfigError("[sweep] section present but lists no points")
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def validate_config(cfg: ExperimentConfig) -> None:
    def bad(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}")

    if cfg.dims not in (1, 2):
        bad("grid", "dims", "must be 1 or 2")
    if not cfg.dx > 0:
        bad("grid", "dx", "must be positive")
    if not cfg.m > 1:
        bad("model", "m", "must exceed 1")
    if not cfg.epsilon > 0:
        bad("model", "epsilon", "must be positive")
    if cfg.dt is not None and not cfg.dt > 0:
        bad("time", "dt", "must be positive")
    if not cfg.steady_tol > 0:
        bad("time", "steady_tol", "must be positive")
    if cfg.max_steps < 1:
        bad("time", "max_steps", "must be at least 1")
    if not 0 < cfg.cfl_safety <= 1:
        bad("time", "cfl_safety", "must lie in (0, 1]")
    if cfg.initial.kind not in INITIAL_KINDS:
        bad("initial", "type", f"must be one of {INITIAL_KINDS}")
    if not cfg.initial.mass > 0:
        bad("initial", "mass", "must be positive")
    if not 0 < cfg.initial.fraction <= 1:
        bad("initial", "fraction", "must lie in (0, 1]")
    if cfg.initial.count < 1:
        bad("initial", "count", "must be at least 1")
    if cfg.snapshot_every < 0:
        bad("output", "snapshot_every", "must be nonnegative")
    if cfg.workers < 1:
        bad("sweep", "workers", "must be at least 1")
    for m, mass, kname in cfg.sweep:
        if not m > 1 or not mass > 0:
            bad("sweep", "points", f"invalid point m={m}, M={mass}")
        if kname is not None and kname != cfg.kernel:
            _validate_domain(replace(cfg, kernel=kname, sweep=()), "sweep", "kernels")
    _validate_domain(cfg, "kernel", "name")


def _validate_domain(cfg: ExperimentConfig, section: str, key: str) -> None:
    def bad(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}")

    try:
        k = cfg.make_kernel()
    except (ValueError, OSError) as exc:
        bad(section, key, str(exc))
    lower, upper = cfg.resolved_domain(k)
    length = upper - lower
    if not length > 0:
        bad("grid", "domain", "upper bound must exceed lower bound")
    cells = length / cfg.dx
    if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
        bad("grid", "domain", f"dx = {cfg.dx} does not divide the domain length {length}")
    if length < 4.0 * k.effective_radius - 1e-12:
        bad("grid", "domain", f"length {length} is below 4 kernel radii ({4.0 * k.effective_radius:.4g})")


# -- initial data ----------------------------------------------------------


def _rescale(f: DensityField, mass: float) -> DensityField:
    current = total_mass(f)
    if current <= 0:
        raise ValueError("initial density has no mass to rescale")
    data = f.data * (mass / current)
    # One correction pass removes the rounding of the product above.
    data *= mass / (float(np.sum(data)) * f.cell_volume)
    return f.with_data(data)


def build_initial(spec: InitialSpec, domain: tuple[float, float], dx: float, dims: int = 1) -> DensityField:
    """Initial density on [lower, upper)^dims rescaled to total mass spec.mass."""
    if not spec.mass > 0:
        raise ValueError("mass must be positive")
    f = DensityField.on_domain(domain[0], domain[1], dx, dims)
    length = domain[1] - domain[0]
    X = f.coordinates()
    data = np.zeros(f.shape)
    if spec.kind == "box":
        if 2 * spec.half_width > length:
            raise ValueError(f"box of width {2 * spec.half_width} does not fit the domain length {length}")
        inside = np.all(np.abs(X - spec.center) < spec.half_width, axis=-1)
        data[inside] = 1.0
    elif spec.kind == "boxes":
        spacing = length / spec.count
        if 2 * spec.half_width > spacing:
            raise ValueError(f"boxes of width {2 * spec.half_width} overlap at spacing {spacing}")
        centers = domain[0] + spacing * (np.arange(spec.count) + 0.5)
        for idx in np.ndindex(*(spec.count,) * dims):
            c = centers[list(idx)]
            data[np.all(np.abs(X - c) < spec.half_width, axis=-1)] = 1.0
    elif spec.kind == "random":
        rng = np.random.default_rng(spec.seed)
        heights = rng.uniform(size=f.shape)
        occupied = rng.uniform(size=f.shape) < spec.fraction
        data = heights * occupied
    elif spec.kind == "constant":
        data[:] = 1.0
    else:
        raise ValueError(f"unknown initial kind {spec.kind!r}")
    if not np.any(data > 0):
        raise ValueError("initial density is empty; enlarge the box or the occupied fraction")
    return _rescale(f.with_data(data), spec.mass)


# -- runs ------------------------------------------------------------------


@dataclass
class RunResult:
    report: StationaryReport
    field: DensityField
    output: Path | None
    trajectory: Trajectory | None = None

    def hard_failures(self) -> list[str]:
        return hard_failures(self.report)


def hard_failures(report: StationaryReport) -> list[str]:
    """Assertions every run must meet: the density bound and the component gap."""
    out = []
    if not report.bound.passed:
        out.append(f"max density {report.max_density:.6g} exceeds rho_star {report.rho_star:.6g}")
    if not report.gap.passed:
        out.append(f"component gap {report.min_gap:.4g} below {report.gap.required:.4g}")
    return out


def margin_warnings(f: DensityField, k: Kernel) -> list[str]:
    """Flag supports that come within one kernel radius of their periodic image."""
    warnings = []
    reach = k.effective_radius
    for comp in support_components(f):
        for axis, n in enumerate(f.shape):
            span = len(np.unique(comp[:, axis])) * f.dx
            if span + reach > n * f.dx:
                warnings.append(
                    f"support spans {span:.4g} of {n * f.dx:.4g} along axis {axis}; "
                    f"it interacts with its periodic image"
                )
    return warnings


def run(cfg: ExperimentConfig, output: str | Path | None = None) -> RunResult:
    """Simulate to a stationary state, write artifacts, and analyse the result."""
    validate_config(cfg)
    k = cfg.make_kernel()
    domain = cfg.resolved_domain(k)
    f0 = build_initial(cfg.initial, domain, cfg.dx, cfg.dims)
    s = build_stencil(k, cfg.dx, cfg.dims, cfg.truncation)
    p = cfg.params()
    out_dir = Path(output) if output is not None else (Path(cfg.output) if cfg.output else None)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    snap_dir = out_dir / "snapshots" if out_dir is not None and cfg.snapshot_every else None
    try:
        field_, traj = run_to_stationary(f0, s, p, cfg.snapshot_every or None, snap_dir)
    except Exception as exc:
        raise RuntimeError(f"run {cfg.kernel} m={cfg.m} M={cfg.initial.mass} failed: {exc}") from exc
    for msg in margin_warnings(field_, k):
        log.warning(msg)
    report = analyze(field_, k, s, p, traj)
    if out_dir is not None:
        traj.write_csv(out_dir / "trajectory.csv")
        write_field_csv(field_, out_dir / "field.csv")
        if cfg.dims == 2:
            write_pgm(field_, out_dir / "field.pgm")
        (out_dir / "report.txt").write_text(report.text() + "\n")
        write_rows(out_dir / "report.csv", [dict(report.row(), M=cfg.initial.mass)])
    return RunResult(report, field_, out_dir, traj)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path, rows: list[dict], columns=StationaryReport.CSV_COLUMNS + ("error",)) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def _sweep_point(args):
    cfg, index, out_dir = args
    name = f"point_{index:03d}_{cfg.kernel}_m{cfg.m:g}_M{cfg.initial.mass:g}"
    point_dir = None if out_dir is None else Path(out_dir) / name
    try:
        result = run(cfg, point_dir)
    except Exception as exc:  # recorded in the row; the sweep continues
        return {"m": cfg.m, "M": cfg.initial.mass, "kernel": cfg.kernel, "error": str(exc)}, [str(exc)]
    row = result.report.row()
    row["M"] = cfg.initial.mass
    return row, result.hard_failures()


@dataclass
class SweepResult:
    rows: list[dict]
    failures: list[tuple[int, str]]
    path: Path | None


def sweep(cfg: ExperimentConfig, output: str | Path | None = None) -> SweepResult:
    """Run every (m, M) point and write sweep.csv in sweep-list order."""
    if not cfg.sweep:
        raise ConfigError("[sweep] lists no points")
    out_dir = Path(output) if output is not None else (Path(cfg.output) if cfg.output else None)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.point(m, mass, kname), i, out_dir) for i, (m, mass, kname) in enumerate(cfg.sweep)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows = [r for r, _ in results]
    failures = [(i, msg) for i, (_, fails) in enumerate(results) for msg in fails]
    path = None
    if out_dir is not None:
        path = out_dir / "sweep.csv"
        write_rows(path, rows)
    return SweepResult(rows, failures, path)
