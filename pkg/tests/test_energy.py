from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aggdiff.convolution import build_stencil, zero_stencil
from aggdiff.energy import (
    component_constants,
    energy,
    euler_lagrange_field,
    interior_mask,
    minimizer_constant,
    outside_support_violations,
)
from aggdiff.grid import DensityField, support_components
from aggdiff.integrator import SimParams, run_to_stationary
from aggdiff.kernels import kernel_l1_norm, make_bump_kernel, make_exponential_kernel


def test_zero_field():
    e = energy(DensityField(np.zeros(20), 0.4), build_stencil(make_bump_kernel(), 0.4), SimParams(m=3))
    assert (e.entropy, e.interaction, e.total) == (0.0, 0.0, 0.0)
    lam = euler_lagrange_field(DensityField(np.zeros(20), 0.4), build_stencil(make_bump_kernel(), 0.4), SimParams(m=3))
    assert np.all(lam == 0.0)


def test_constant_field_closed_forms():
    c, n, dx, m, eps = 0.8, 50, 0.4, 2.5, 1.5
    f = DensityField(np.full(n, c), dx)
    area = n * dx
    p = SimParams(m=m, epsilon=eps)
    e = energy(f, zero_stencil(dx), p)
    assert e.entropy == pytest.approx(eps / (m - 1) * c**m * area, rel=1e-12)
    assert e.interaction == 0.0
    e = energy(f, build_stencil(make_bump_kernel(), dx), p)
    assert e.interaction == pytest.approx(-0.5 * c * c * kernel_l1_norm(make_bump_kernel(), dx) * area, rel=1e-10)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 4.0), st.sampled_from([1.5, 2.0, 3.0]))
def test_scaling_and_signs(seed, alpha, m):
    rng = np.random.default_rng(seed)
    f = DensityField(rng.uniform(0, 2, 40), 0.4)
    s = build_stencil(make_bump_kernel(), 0.4)
    p = SimParams(m=m)
    e1 = energy(f, s, p)
    e2 = energy(f.with_data(alpha * f.data), s, p)
    assert e2.entropy == pytest.approx(alpha**m * e1.entropy, rel=1e-12)
    assert e2.interaction == pytest.approx(alpha**2 * e1.interaction, rel=1e-12)
    assert e1.entropy >= 0.0 and e1.interaction <= 0.0


@given(st.integers(0, 2**32 - 1), st.integers(-20, 20))
def test_euler_lagrange_translation_equivariant(seed, shift):
    rng = np.random.default_rng(seed)
    f = DensityField(rng.uniform(0, 2, 40), 0.4)
    s = build_stencil(make_bump_kernel(), 0.4)
    p = SimParams(m=3)
    a = np.roll(euler_lagrange_field(f, s, p), shift)
    b = euler_lagrange_field(f.with_data(np.roll(f.data, shift)), s, p)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_interior_mask_excludes_edges_and_foot():
    data = np.zeros(20)
    data[5:12] = [0.05, 1, 1, 1, 1, 1, 0.05]
    f = DensityField(data, 0.4)
    mask = data > 0
    inner = interior_mask(f, mask)
    assert list(np.flatnonzero(inner)) == [6, 7, 8, 9, 10]


def test_converged_plateau_is_flat_and_matches_constant():
    dx = 0.4
    f = DensityField.on_domain(-56, 56, dx)
    x = f.coordinates()[..., 0]
    f = f.with_data(np.where(np.abs(x) < 10, 2.0, 0.0))
    s = build_stencil(make_exponential_kernel(), dx)
    p = SimParams(m=3)
    out, traj = run_to_stationary(f, s, p)
    comps = support_components(out)
    assert len(comps) == 1
    (const,) = component_constants(out, comps, s, p)
    assert const.relative_deviation <= 0.01
    D = minimizer_constant(out, s, p)
    assert const.mean == pytest.approx(D, rel=0.02)
    # trajectory energy never rises
    assert np.all(np.diff(traj.energy) <= 1e-8 * np.abs(traj.energy[:-1]))
    assert outside_support_violations(out, comps, s, p, const.mean) >= 0
