from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from aggdiff.kernels import make_bump_kernel, make_parabola_kernel
from aggdiff.steiner import (
    EventBoundaryError,
    IntervalUnion,
    InvalidUnionError,
    Kernel1D,
    LayerFunction,
    derivative_routes,
    energy_decrease_demo,
    finite_difference_derivative,
    first_event_time,
    interaction_derivative,
    interaction_energy,
    lemma_bound,
    make_k_slice,
    make_quartic_cap,
    overlap_condition,
    phi,
    plateau_speed,
    rearrangement_profile,
    run_property_suite,
    slope_floor,
    symmetrize_function,
    symmetrize_union,
    union_interaction,
)


def tent(R=1.0):
    """K(z) = -max(R - |z|, 0): a C^0 test kernel for the interaction integrals."""
    return Kernel1D(
        lambda z: -np.maximum(R - np.abs(z), 0.0),
        lambda z: np.where(np.abs(z) < R, np.sign(z), 0.0),
        R,
        "tent",
    )


def single(c, r, anchor=0):
    return IntervalUnion(anchor, [(c, r)])


def test_single_interval_at_anchor_is_fixed():
    u = single(0, 1.5, anchor=3)
    for tau in (0, 1, 100):
        assert symmetrize_union(u, tau) == u


def test_interval_moves_then_stops():
    u = single(3, 1, anchor=2)
    assert symmetrize_union(u, 2).intervals == ((1, 1),)
    assert symmetrize_union(u, 5).intervals == ((0, 1),)
    assert symmetrize_union(u, 2).bounds() == [(2.0, 4.0)]


def test_two_intervals_merge():
    u = IntervalUnion(0, [(-2, 1), (2, 1)])
    assert first_event_time(u) == 1
    assert symmetrize_union(u, 1).intervals == ((0, 2),)
    assert symmetrize_union(u, 3).intervals == ((0, 2),)
    assert symmetrize_union(u, Fraction(1, 2)).intervals == ((Fraction(-3, 2), 1), (Fraction(3, 2), 1))
    assert symmetrize_union(u, 3).measure == 4


def test_merge_restarts_motion():
    u = IntervalUnion(0, [(Fraction(-1, 2), Fraction(1, 2)), (4, 1)])
    # left stops at 0 at tau = 1/2, right touches it when 4 - tau - 1 = 1/2, i.e. tau = 5/2;
    # the merged interval (-1/2, 5/2) then moves on from centre 1
    assert symmetrize_union(u, Fraction(5, 2)).intervals == ((1, Fraction(3, 2)),)
    assert symmetrize_union(u, 3).intervals == ((Fraction(1, 2), Fraction(3, 2)),)
    assert symmetrize_union(u, 10).intervals == ((0, Fraction(3, 2)),)


def test_overlapping_input_rejected():
    with pytest.raises(InvalidUnionError):
        IntervalUnion(0, [(0, 1), (1.5, 1)])
    with pytest.raises(InvalidUnionError):
        IntervalUnion(0, [(0, -1)])


intervals = st.lists(
    st.tuples(st.integers(0, 40), st.integers(1, 10)), min_size=1, max_size=5
)


def build_union(spec, anchor):
    bounds, x = [], -30
    for gap, width in spec:
        x += gap
        bounds.append((Fraction(x, 4), Fraction(x + width, 4)))
        x += width
    return IntervalUnion.from_bounds(Fraction(anchor, 4), bounds)


@given(intervals, st.integers(-40, 40), st.fractions(0, 20), st.fractions(0, 20))
def test_measure_and_semigroup(spec, anchor, t1, t2):
    u = build_union(spec, anchor)
    a = symmetrize_union(u, t1)
    assert a.measure == u.measure
    assert symmetrize_union(a, t2) == symmetrize_union(u, t1 + t2)


@given(intervals, st.integers(-40, 40))
def test_large_tau_centres_everything(spec, anchor):
    u = build_union(spec, anchor)
    far = symmetrize_union(u, 1000)
    assert far.intervals == ((0, u.measure / 2),)


def test_step_function_fixed_point():
    vals = np.array([0, 1, 2, 3, 2, 1, 0], dtype=float)
    f = LayerFunction.from_samples(vals, 1.0, origin=-3.0)
    for tau in (0.5, 3, 50):
        g = symmetrize_function(f, tau)
        assert [u.intervals for _, u in g.layers] == [u.intervals for _, u in f.layers]


def test_non_nested_layers_rejected():
    low = IntervalUnion(0, [(0, 1)])
    high = IntervalUnion(0, [(3, 1)])
    with pytest.raises(InvalidUnionError):
        LayerFunction([(1, low), (1, high)])


@given(st.lists(st.sampled_from([0.0, 0.5, 1.25, 2.0]), min_size=4, max_size=16), st.floats(0, 6))
def test_mass_preserved_and_limit_is_rearrangement(values, tau):
    vals = np.array(values)
    if not np.any(vals > 0):
        vals[0] = 1.0
    dx = 0.5
    f = LayerFunction.from_samples(vals, dx, origin=0.0, anchor=1.0)
    assert symmetrize_function(f, tau).integral() == f.integral()
    far = symmetrize_function(f, 100)
    band = (np.arange(len(vals)) + 0.5) * dx / 2
    target = rearrangement_profile(vals)
    np.testing.assert_allclose(far(1.0 + band), target, atol=1e-12)
    np.testing.assert_allclose(far(1.0 - band), target, atol=1e-12)


def test_plateau_speed():
    v = plateau_speed(2.0, 3.0)
    assert v(3.0) == 1.0 and v(2.0) == 1.0
    assert v(1.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        plateau_speed(0.0, 3.0)
    f = LayerFunction([(1, IntervalUnion(0, [(4, 2)])), (1, IntervalUnion(0, [(4, 1)]))])
    g = symmetrize_function(f, 2, speed=plateau_speed(2.0, 3.0))
    assert g.layers[0][1].intervals == ((Fraction(7, 2), 2),)  # top of first layer is h = 1: speed 1/4
    assert g.layers[1][1].intervals == ((2, 1),)


def test_slice_kernels():
    bump = make_bump_kernel()
    k0 = make_k_slice(bump, 0.0)
    assert k0.support == 1.0
    z = np.linspace(-1.2, 1.2, 100)
    np.testing.assert_allclose(k0(z), -0.5 * bump(np.abs(z)), rtol=1e-15)
    k6 = make_k_slice(bump, 0.6)
    assert k6.support == pytest.approx(0.8, rel=1e-15)
    np.testing.assert_array_equal(k6(z), k6(-z))
    assert k0.check() and k6.check() and make_quartic_cap(2.0).check()
    with pytest.raises(ValueError):
        make_k_slice(bump, 1.0)
    with pytest.raises(ValueError):
        make_k_slice(make_bump_kernel(dimension=2).__class__("x", bump.profile, bump.derivative, 2.0), 0.1)


def test_slice_derivative_matches_differences():
    K = make_k_slice(make_bump_kernel(), 0.3)
    z = np.linspace(0.05, 0.9, 20)
    h = 1e-6
    np.testing.assert_allclose(K.prime(z), (K(z + h) - K(z - h)) / (2 * h), rtol=1e-6, atol=1e-9)


def brute_force_pair(K, a1, b1, a2, b2):
    val, _ = integrate.dblquad(lambda y, x: float(K(x - y)), a1, b1, a2, b2, epsabs=1e-12, epsrel=1e-11)
    return val


def test_interaction_energy_matches_brute_force():
    K = tent(1.0)
    u = single(0, 1)
    # integral over [-1,1]^2 of -max(1 - |x - y|, 0), by 2D quadrature
    assert union_interaction(u, u, K) == pytest.approx(brute_force_pair(K, -1, 1, -1, 1), rel=1e-6)
    # overlap length 2 - |z| against 1 - |z| on [-1, 1]: -2 * (2 - 3/2 + 1/3)
    assert union_interaction(u, u, K) == pytest.approx(-5 / 3, rel=1e-10)
    K = make_k_slice(make_bump_kernel(), 0.3)
    a, b = single(-0.4, 0.3), single(0.5, 0.2)
    assert union_interaction(a, b, K) == pytest.approx(brute_force_pair(K, -0.7, -0.1, 0.3, 0.7), rel=1e-6)


def test_out_of_range_interaction_is_zero():
    K = make_quartic_cap(1.0)
    assert interaction_energy(single(-3, 1), single(3, 1), K, 0) == 0.0
    assert interaction_energy(single(-3, 1), single(3, 1), K, 0.4) == 0.0


def test_same_sign_centres_give_zero_derivative():
    K = make_quartic_cap(1.0)
    a, b = single(1.0, 0.5), single(2.0, 0.7)
    assert interaction_derivative(a, b, K) == 0.0
    assert abs(finite_difference_derivative(a, b, K)) < 1e-8
    assert interaction_energy(a, b, K, 0.3) == pytest.approx(interaction_energy(a, b, K, 0.0), rel=1e-12)


def test_opposite_centres_far_apart():
    K = tent(1.0)
    a, b = single(-2, 1), single(2, 1)
    assert not overlap_condition(-2, 1, 2, 1, 1.0)
    assert interaction_derivative(a, b, K) >= 0.0
    assert finite_difference_derivative(a, b, K, delta=0.25) >= -1e-12


def test_derivative_rejects_event_boundary():
    with pytest.raises(EventBoundaryError):
        interaction_derivative(single(-1, 1), single(0.5, 1), make_quartic_cap(), tau=0.5)
    with pytest.raises(ValueError):
        interaction_derivative(IntervalUnion(0, [(-1, 0.2), (1, 0.2)]), single(0.5, 1), make_quartic_cap())


@given(
    st.floats(-1.5, 1.5).filter(lambda c: abs(c) > 0.05),
    st.floats(0.05, 1.2),
    st.floats(-1.5, 1.5).filter(lambda c: abs(c) > 0.05),
    st.floats(0.05, 1.2),
    st.sampled_from([0.0, 0.4, 0.7]),
)
def test_routes_agree_and_derivative_nonnegative(c1, r1, c2, r2, l):
    K = make_k_slice(make_bump_kernel(), l)
    routes = derivative_routes(single(c1, r1), single(c2, r2), K)
    assert routes.agree()
    assert routes.closed_form >= -1e-9


def test_phi_examples():
    assert phi(0.5, 0.7, 0.5, 0.7, 1.3) == pytest.approx(1.3)
    assert phi(-1, 1, 1, 1, 1) == 1
    assert phi(-2, 1, 2, 1, 1) == -1
    for c1, r1, c2, r2 in [(-3, 0.5, 3, 0.5), (0, 0.1, 0.2, 3.0)]:
        assert not overlap_condition(c1, r1, c2, r2, 1.0)
        d = abs(c2 - c1)
        assert min(-abs(r1 - r2) + d + 1.0, -d + r1 + r2 + 1.0) <= 0


def test_slope_floor_and_bound():
    K = make_quartic_cap(1.0)
    # |K'(z)| = 4 z (1 - z^2) on [1/(3 sqrt 2), 1/sqrt 2]; smallest at the left end
    lo = 1 / (3 * math.sqrt(2))
    assert slope_floor(K) == pytest.approx(4 * lo * (1 - lo * lo), rel=1e-9)
    assert lemma_bound(-0.2, 0.3, 0.2, 0.3, K) == pytest.approx(phi(-0.2, 0.3, 0.2, 0.3, 1.0) * slope_floor(K) / 6)


def test_quantitative_bound_counterexample():
    """Two thin intervals near the range edge: the derivative sits far below the bound."""
    K = make_k_slice(make_bump_kernel(), 0.0)
    c1, r1, c2, r2 = -0.1, 0.01, 0.1, 0.01
    assert overlap_condition(c1, r1, c2, r2, K.support)
    d = interaction_derivative(single(c1, r1), single(c2, r2), K)
    bound = lemma_bound(c1, r1, c2, r2, K)
    assert d > 0
    assert d < bound / 100


def test_energy_decrease_demo_series():
    k = make_parabola_kernel()
    sym = LayerFunction.from_samples([0, 1, 2, 1, 0, 0, 0, 0, 0], 0.5, origin=-1.0)
    series = energy_decrease_demo(sym, k, 4.0, samples=9)
    assert series.monotone
    np.testing.assert_allclose(series.energies, series.energies[0], rtol=1e-12)

    two = LayerFunction([(1, IntervalUnion(0, [(-0.9, 0.3), (0.9, 0.3)]))])
    series = energy_decrease_demo(two, k, 0.6, samples=7)
    assert series.monotone
    assert np.all(np.diff(series.energies) < 0)

    far = LayerFunction([(1, IntervalUnion(0, [(-3, 0.5), (3, 0.5)]))])
    series = energy_decrease_demo(far, k, 2.6, samples=14)
    assert series.monotone
    # only self-interaction until the inner gap 5 - 2 tau drops below the range 1
    gap = 5 - 2 * series.taus
    np.testing.assert_allclose(series.energies[gap >= 1], series.energies[0], rtol=1e-12)
    assert series.energies[-1] < series.energies[0]


def test_small_property_suite():
    results = run_property_suite(seed=3, n_pairs=300, n_tuples=60, n_routes=20, n_functions=10, n_unions=100)
    by_name = {r.name: r for r in results}
    for name in (
        "measure preservation",
        "semigroup composition",
        "derivative nonnegative",
        "derivative routes agree",
        "mass preservation",
        "large-tau rearrangement",
        "layer-cake consistency",
    ):
        assert by_name[name].ok, by_name[name].line()
    assert by_name["quantitative lower bound"].total == 60
