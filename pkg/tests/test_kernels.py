from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from aggdiff.kernels import (
    COMPACT,
    UNBOUNDED,
    InvalidKernelError,
    Kernel,
    StencilTooCoarseError,
    kernel_by_name,
    kernel_l1_norm,
    load_tabulated_kernel,
    make_bump_kernel,
    make_exponential_kernel,
    make_parabola_kernel,
    make_tabulated_kernel,
    validate_kernel,
)

# 10 * integral_0^1 exp(1/(x^2 - 1)) dx, by 30-digit adaptive quadrature.
BUMP_L1_EXACT = 2.2199690808403972
# sum over j in {-2..2} of 5 exp(1/((0.4 j)^2 - 1)) * 0.4, hand-expanded.
BUMP_L1_LATTICE = 2.200770703570683


def test_bump_values():
    k = make_bump_kernel()
    assert k(0.0) == pytest.approx(-5 * math.exp(-1), rel=1e-15)
    assert k(0.0) == pytest.approx(-1.8394, abs=1e-4)
    assert k(0.5) == pytest.approx(-5 * math.exp(-4 / 3), rel=1e-15)
    assert k(1.0) == 0.0
    assert k(1.7) == 0.0
    assert k.kind == COMPACT and k.support_radius == 1.0


def test_exponential_values():
    k = make_exponential_kernel()
    assert k(0.0) == -1.0
    assert k.kind == UNBOUNDED and math.isinf(k.support_radius)
    r = np.linspace(30, 200, 50)
    assert np.all(np.abs(k(r)) < 1e-12)
    assert k.l1_norm == pytest.approx(2.0, rel=1e-10)


def test_parabola_values():
    k = make_parabola_kernel()
    assert k(0.0) == -1.0
    assert k(1.0) == 0.0
    assert k.l1_norm == pytest.approx(4 / 3, rel=1e-10)
    # independent quadrature oracle
    val, _ = integrate.quad(lambda x: max(1 - x * x, 0.0), -1, 1)
    assert k.l1_norm == pytest.approx(val, rel=1e-10)


def test_bump_l1_norm_matches_quadrature_oracle():
    assert make_bump_kernel().l1_norm == pytest.approx(BUMP_L1_EXACT, rel=1e-9)


def test_lattice_norms():
    assert kernel_l1_norm(make_exponential_kernel(), 0.001, 40.0) == pytest.approx(2.0, abs=1e-3)
    assert kernel_l1_norm(make_bump_kernel(), 0.001) == pytest.approx(2.2200, abs=1e-3)
    coarse = kernel_l1_norm(make_bump_kernel(), 0.4)
    assert 2.15 <= coarse <= 2.25
    assert coarse == pytest.approx(BUMP_L1_LATTICE, rel=1e-12)


def test_lattice_norm_errors():
    with pytest.raises(StencilTooCoarseError):
        kernel_l1_norm(make_bump_kernel(), 2.0)
    with pytest.raises(ValueError):
        kernel_l1_norm(make_exponential_kernel(), 0.4, radius_cap=10.0)
    with pytest.raises(ValueError):
        kernel_l1_norm(make_bump_kernel(), 0.0)


def test_lattice_norm_converges_first_order_or_better():
    k = make_bump_kernel()
    vals = [kernel_l1_norm(k, dx) for dx in (0.1, 0.05, 0.025, 0.0125)]
    changes = np.abs(np.diff(vals))
    assert np.all(changes[1:] < 4 * changes[:-1] + 1e-15)


def test_exponential_truncation_radius():
    k = make_exponential_kernel()
    assert math.exp(-k.truncation_radius) == pytest.approx(1e-12, rel=1e-6)
    assert k.effective_radius == k.truncation_radius


@pytest.mark.parametrize("factory", [make_bump_kernel, make_parabola_kernel])
def test_validate_compact(factory):
    report = validate_kernel(factory(), 1024)
    assert report.passed, report.failures()
    assert report.checks["W4"]


def test_validate_exponential():
    report = validate_kernel(make_exponential_kernel(), 1024)
    assert report.passed, report.failures()
    assert report.checks["W3"]


def test_validate_rejects_positive_profile():
    k = Kernel("positive", lambda r: np.exp(-r), lambda r: -np.exp(-r), math.inf, kind=UNBOUNDED)
    report = validate_kernel(k, 64)
    assert not report.passed
    assert "nonpositive" in report.failures()


def test_validate_names_nonfinite_radius():
    def prof(r):
        out = -np.exp(-r)
        return np.where(r > 5.0, np.nan, out)

    k = Kernel("broken", prof, lambda r: np.exp(-r), 10.0, kind=COMPACT)
    with pytest.raises(InvalidKernelError, match="r = 5"):
        validate_kernel(k, 64)


def test_validate_needs_samples():
    with pytest.raises(ValueError):
        validate_kernel(make_bump_kernel(), 8)


@given(st.floats(0, 3), st.floats(0, 3))
def test_profiles_nondecreasing(a, b):
    lo, hi = min(a, b), max(a, b)
    for k in (make_bump_kernel(), make_parabola_kernel(), make_exponential_kernel()):
        assert k(lo) <= k(hi) + 1e-15
        assert k(lo) <= 0.0


@given(st.floats(1.0, 50.0))
def test_compact_kernels_exactly_zero_outside(r):
    for k in (make_bump_kernel(), make_parabola_kernel()):
        assert k(r) == 0.0
        assert float(k.derivative(np.array([r]))[0]) == 0.0


def test_two_dimensional_norm():
    k = make_bump_kernel(dimension=2)
    # 2 pi * integral_0^1 5 r exp(1/(r^2 - 1)) dr
    assert k.l1_norm == pytest.approx(2.3325619658916503, rel=1e-9)


def test_kernel_by_name_and_table(tmp_path):
    assert kernel_by_name("parabola").name == "parabola"
    with pytest.raises(InvalidKernelError):
        kernel_by_name("gaussian")
    with pytest.raises(InvalidKernelError):
        kernel_by_name("custom")
    table = tmp_path / "w.txt"
    r = np.linspace(0, 1, 11)
    np.savetxt(table, np.column_stack([r, -(1 - r**2)]))
    k = kernel_by_name("custom", 1, table)
    assert k(0.55) == pytest.approx(-0.5 * ((1 - 0.5**2) + (1 - 0.6**2)), rel=1e-12)
    assert k(1.5) == 0.0
    assert load_tabulated_kernel(table).support_radius == 1.0


def test_tabulated_kernel_rejects_bad_radii():
    with pytest.raises(InvalidKernelError):
        make_tabulated_kernel([0.0, 0.5, 0.4], [-1.0, -0.5, 0.0])
    with pytest.raises(InvalidKernelError):
        make_tabulated_kernel([0.1, 0.5], [-1.0, 0.0])
