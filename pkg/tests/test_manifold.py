from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from shearband import dynamics as dyn
from shearband.errors import RBarOutOfRange
from shearband.manifold import (
    CriticalManifold,
    build_triangle,
    contour_line,
    delta_bound,
    h0,
    h1,
    inward_flux,
    inward_flux_n0_closed_form,
    invariance_defect,
    manifold_report,
    max_defect,
    normal_eigenvalue,
    normal_hyperbolicity_certificate,
    parabola_fit_error,
    reduced_field,
    slow_manifold,
)
from shearband.params import ModelParams, derive_constants, validate_params

CRIT = validate_params(ModelParams(1.0, 0.8, 0.0))
REF = validate_params(ModelParams(1.0, 0.8, 0.05))


def root_h0(params, p, q):
    """Oracle: the positive root of f(p, q, .) = 0 at n = 0, by bracketing."""
    return brentq(lambda r: dyn.fast_r_rate(params, p, q, r) / r, 1e-9, 1e3, xtol=1e-15, rtol=1e-15)


def test_h0_anchors_against_root_finding():
    assert h0(CRIT, 0.0, 0.0) == pytest.approx(4.0 / 1.8, rel=1e-15)
    assert h0(CRIT, 0.0, 0.0) == pytest.approx(root_h0(CRIT, 0.0, 0.0), rel=1e-13)
    k = derive_constants(CRIT)
    assert abs(h0(CRIT, 0.0, 0.0) - k.a) <= 1e-12
    assert abs(h0(CRIT, 0.0, 1.0) - k.c) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.0, 1.0))
def test_h0_is_the_root(p, q):
    assert h0(CRIT, p, q) == pytest.approx(root_h0(CRIT, p, q), rel=1e-11)


def test_graph_residual_on_dense_grid():
    man = slow_manifold(CRIT)
    P, Q = man.grid(200)
    R = man(P, Q)
    assert np.all(R > 0)
    assert np.max(np.abs(dyn.fast_r_rate(CRIT, P, Q, R))) <= 1e-12


def test_contour_lines_through_origin_and_m1():
    k = derive_constants(CRIT)
    _, rhs = contour_line(CRIT, k.a)
    assert abs(rhs) <= 1e-14
    slope, rhs = contour_line(CRIT, k.c)
    assert rhs == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(RBarOutOfRange):
        contour_line(CRIT, 0.0)


@given(st.floats(0.05, 0.95), st.floats(0.0, 1.0))
def test_h0_constant_along_contour(frac, t):
    r_bar = frac * derive_constants(CRIT).c
    tri = build_triangle(CRIT, r_bar)
    p, q = t * tri.p_intercept, (1.0 - t) * tri.q_intercept
    assert abs(h0(CRIT, p, q) - r_bar) <= 1e-12


def test_triangle_at_half_c():
    c = derive_constants(CRIT).c
    tri = build_triangle(CRIT, 0.5 * c)
    # direct substitution: q_int = 2m/(1+m) - (m/lam)(r_bar - 2/(1+m)) with lam = 1
    q_int = 1.6 / 1.8 - 0.8 * (0.5 * c - 2.0 / 1.8)
    assert tri.q_intercept == pytest.approx(q_int, rel=1e-14)
    assert tri.p_intercept == pytest.approx(q_int / (0.5 * c), rel=1e-14)


def test_triangle_near_c_reaches_q_one():
    c = derive_constants(CRIT).c
    tri = build_triangle(CRIT, c * (1 - 1e-10))
    assert tri.q_intercept == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("r_bar", [0.0, -1.0, 10.0])
def test_r_bar_out_of_range(r_bar):
    with pytest.raises(RBarOutOfRange):
        build_triangle(CRIT, r_bar)


def test_normal_eigenvalue_equals_fast_jacobian_entry():
    man = slow_manifold(CRIT)
    P, Q = man.grid(15)
    for p, q in zip(P.ravel(), Q.ravel()):
        J = dyn.jacobian(CRIT, (p, q, h0(CRIT, p, q)), "fast")
        assert normal_eigenvalue(CRIT, p, q) == pytest.approx(J[2, 2], rel=1e-12)


def test_normal_hyperbolicity_minimum_sits_on_p_axis():
    man = slow_manifold(CRIT)
    val = normal_hyperbolicity_certificate(CRIT, man, 200)
    assert val > 0
    _, _, q_lo, q_hi = man.domain
    axis = (CRIT.m / CRIT.lam) * h0(CRIT, 0.0, q_hi)
    assert val == pytest.approx(axis, rel=1e-12)


def test_order_zero_graph_at_n_zero():
    man = slow_manifold(CRIT)
    P, Q = man.grid(11)
    np.testing.assert_array_equal(man(P, Q), h0(CRIT, P, Q))


@pytest.mark.parametrize("lam, m", [(1.0, 0.8), (0.5, 0.6), (2.0, 0.9), (0.3, 0.4)])
def test_corrected_defect_is_quadratic_in_n(lam, m):
    d = []
    d0 = []
    for n in (0.05, 0.025):
        prm = validate_params(ModelParams(lam, m, n))
        d.append(max_defect(slow_manifold(prm)))
        d0.append(max_defect(slow_manifold(prm, order=0)))
    assert 3.5 <= d[0] / d[1] <= 4.5
    assert 1.6 <= d0[0] / d0[1] <= 2.4


def test_h1_solves_first_order_condition():
    # the corrected defect is smaller than the h0 defect by a factor O(n)
    P, Q = build_triangle(REF).hypotenuse(7)
    eps = 1e-4
    prm = validate_params(ModelParams(1.0, 0.8, eps))
    man = slow_manifold(prm)
    scale = np.max(np.abs(invariance_defect(slow_manifold(prm, order=0), P, Q)))
    assert np.max(np.abs(invariance_defect(man, P, Q))) <= 50.0 * eps * scale
    assert np.all(np.isfinite(h1(REF, P, Q)))


def test_pinned_graph_passes_equilibria():
    man = slow_manifold(REF, pin=True)
    k = derive_constants(REF)
    assert man(0.0, 0.0) == pytest.approx(k.a, abs=1e-12)
    assert man(0.0, 1.0) == pytest.approx(k.c, abs=1e-12)


def test_reduced_field_fixed_points():
    man = slow_manifold(REF)
    assert reduced_field(REF, 0.0, 0.0, man) == (0.0, 0.0)
    assert reduced_field(REF, 0.0, 1.0, man) == (0.0, 0.0)


def test_reduced_field_matches_3d_on_graph():
    man = slow_manifold(REF)
    p, q = 0.05, 0.4
    full = dyn.slow_field(REF, (p, q, man(p, q)))
    np.testing.assert_allclose(reduced_field(REF, p, q, man), full[:2], rtol=1e-15)


@pytest.mark.parametrize("n", [0.0, 0.01, 0.05])
def test_hypotenuse_flux_positive(n):
    prm = validate_params(ModelParams(1.0, 0.8, n))
    man = slow_manifold(prm)
    P, Q = man.triangle.hypotenuse(1000)
    flux, delta = inward_flux(prm, man.triangle, (P, Q), man)
    assert delta > 0
    assert np.min(flux) > 0


def test_n_zero_flux_bound_chain():
    man = slow_manifold(CRIT)
    tri = man.triangle
    P, Q = tri.hypotenuse(1000)
    flux, delta = inward_flux(CRIT, tri, (P, Q), man)
    assert delta == pytest.approx(-tri.p_intercept * tri.q_intercept * (1 - tri.q_intercept), rel=1e-15)
    np.testing.assert_allclose(flux, inward_flux_n0_closed_form(CRIT, tri, P), rtol=0, atol=1e-10)
    assert np.all(flux >= delta - 1e-10)
    # the bound is attained at the q-axis end of the hypotenuse
    assert flux[0] - delta <= 1e-3 * (flux[-1] - delta)
    assert delta_bound(tri) == delta


def test_sides_point_inward():
    man = slow_manifold(REF)
    q = np.linspace(0.0, man.triangle.q_intercept, 50)
    pd, _ = reduced_field(REF, 0.0 * q, q, man)
    assert np.all(pd == 0.0)
    p = np.linspace(0.0, man.triangle.p_intercept, 50)
    _, qd = reduced_field(REF, p, 0.0 * p, man)
    np.testing.assert_allclose(qd, derive_constants(REF).b * p * man(p, 0.0 * p), rtol=1e-14)
    assert np.all(qd >= 0)


def test_parabola_family_at_m_one():
    prm = validate_params(ModelParams(1.0, 1.0, 0.0))
    man = slow_manifold(prm)
    starts = [(0.01, 0.2), (0.02, 0.3), (0.005, 0.15)]
    assert parabola_fit_error(prm, man, starts) <= 1e-8


def test_report_fields():
    rep = manifold_report(REF)
    for key in ("r_bar", "intercepts", "min_flux", "min_normal_eigenvalue", "defect_h0", "defect_h0_plus_nh1"):
        assert key in rep
    assert rep["defect_h0_plus_nh1"] < rep["defect_h0"]
    assert rep["min_flux"] > 0
    assert 0 < rep["domain_margin"] <= 0.25


def test_manifold_is_frozen_dataclass():
    man = slow_manifold(REF)
    assert isinstance(man, CriticalManifold)
    with pytest.raises(AttributeError):
        man.order = 0
