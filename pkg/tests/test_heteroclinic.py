from __future__ import annotations

import math

import numpy as np
import pytest

from shearband import dynamics as dyn
from shearband.errors import (
    DegenerateCase,
    DomainExit,
    FitFailure,
    InconsistentLambda,
    NZero,
    OutOfDomain,
)
from shearband.heteroclinic import (
    Controls,
    Orbit,
    compute_shift,
    expected_landing_rate,
    extract_kappa,
    integrate,
    landing_analysis,
    lift_residual,
    orbit_distance,
    restart_from,
    shoot_heteroclinic,
)
from shearband.manifold import slow_manifold
from shearband.params import ModelParams, derive_constants, validate_params


def synthetic(params, terms, eta=np.arange(-12.0, -4.0, 0.01)):
    """Orbit M0 + sum(coef * exp(rate * eta) * X) for (coef, rate, X) in ``terms``."""
    m0 = np.array([0.0, 0.0, derive_constants(params).a])
    pts = m0[:, None] + sum(c * np.exp(k * eta) * np.asarray(x)[:, None] for c, k, x in terms)
    return Orbit(eta=eta, points=pts, params=params)


def test_reference_orbit_converges(ref_params, ref_orbit):
    orbit, asym = ref_orbit
    c = derive_constants(ref_params).c
    assert orbit.converged
    assert orbit.end_distance <= 1e-8
    np.testing.assert_allclose(orbit.points[:, -1], [0.0, 1.0, c], atol=1e-8)
    assert np.all(np.diff(orbit.eta) > 0)
    assert asym.kappa2_bar > 0
    assert asym.kappa2_prime_nonzero


def test_orbit_stays_in_lifted_triangle(ref_orbit):
    orbit, _ = ref_orbit
    man = orbit.manifold
    assert np.all(man.triangle.contains(orbit.p, orbit.q, tol=1e-12))
    P, Q = man.grid(201)
    keep = man.triangle.contains(P, Q)
    R = man(P[keep], Q[keep])
    assert R.min() - 1e-12 <= orbit.r.min() and orbit.r.max() <= R.max() + 1e-12


def test_leaves_m0_along_x02(ref_orbit):
    _, asym = ref_orbit
    assert asym.kappa_fit.direction_error <= 1e-3
    assert asym.kappa_fit.log_slope == pytest.approx(2.0, abs=0.01)


def test_kappa_stable_as_window_moves_earlier(ref_params, ref_orbit):
    orbit, _ = ref_orbit
    start = orbit.eta[0] + 2.5
    ks = [extract_kappa(orbit, ref_params, window_start=start + d).kappa for d in (0.0, -0.5, -1.0)]
    assert max(ks) - min(ks) <= 5e-4 * ks[0]


def test_epsilon_robustness(ref_params, ref_orbit):
    orbit, _ = ref_orbit
    finer, _ = shoot_heteroclinic(ref_params, 1e-7)
    m0 = np.array([0.0, 0.0, derive_constants(ref_params).a])
    assert orbit_distance(orbit, finer, min_dist_from=m0) <= 1e-6


def test_restart_reproduces_point_set(ref_orbit):
    orbit, _ = ref_orbit
    mid = orbit.eta[len(orbit) // 3]
    again = restart_from(orbit, mid)
    tail = Orbit(eta=orbit.eta[orbit.eta >= mid], points=orbit.points[:, orbit.eta >= mid],
                 params=orbit.params, manifold=orbit.manifold)
    assert again.converged
    assert orbit_distance(tail, again) <= 1e-6


def test_halving_tolerances(ref_params, ref_orbit):
    orbit, _ = ref_orbit
    ctl = Controls()
    tight, _ = shoot_heteroclinic(ref_params, controls=Controls(rel_tol=ctl.rel_tol / 2, abs_tol=ctl.abs_tol / 2))
    mid = 0.5 * (orbit.eta[0] + orbit.eta[-1])
    assert np.linalg.norm(orbit.at(mid) - tight.at(mid)) <= 10 * ctl.rel_tol
    assert np.linalg.norm(orbit.points[:, -1] - tight.points[:, -1]) <= 10 * ctl.rel_tol


def test_synthetic_kappa_three(ref_params):
    x02 = dyn.unstable_node_vectors(ref_params)[1]
    fit = extract_kappa(synthetic(ref_params, [(3.0, 2.0, x02)]), ref_params)
    # displacements near 1e-10 ride on r = a, so rounding limits the fit to ~1e-7
    assert fit.kappa == pytest.approx(3.0, rel=1e-6)
    assert fit.direction_error <= 1e-6


def test_x01_tangency_is_rejected(ref_params):
    x01, x02, _ = dyn.unstable_node_vectors(ref_params)
    with pytest.raises(FitFailure):
        extract_kappa(synthetic(ref_params, [(1.0, 1.0, x01), (1.0, 2.0, x02)]), ref_params)


def test_shift_is_zero_when_kappa_matches(ref_params):
    a = derive_constants(ref_params).a
    g0, u0 = 1.7, 1.7 * a
    kappa = g0 ** (1 + ref_params.m) * u0 ** (-ref_params.n)
    assert abs(compute_shift(g0, u0, ref_params, kappa)) <= 1e-15


@pytest.mark.parametrize("s", [0.1, 2.0, 37.0])
def test_shift_under_gamma0_scaling(ref_params, s):
    a = derive_constants(ref_params).a
    base = compute_shift(1.0, a, ref_params, 0.9)
    moved = compute_shift(s, s * a, ref_params, 0.9)
    m, n = ref_params.m, ref_params.n
    assert moved - base == pytest.approx(0.5 * (1 + m - n) * math.log(s), rel=1e-12, abs=1e-14)


def test_inconsistent_lambda(ref_params):
    with pytest.raises(InconsistentLambda):
        compute_shift(1.0, 3.0, ref_params, 1.0)


def test_landing_rate_one_third(ref_params, ref_orbit):
    _, asym = ref_orbit
    assert expected_landing_rate(ref_params) == pytest.approx(1.0 / 3.0, rel=1e-14)
    assert asym.landing_rate == pytest.approx(1.0 / 3.0, rel=0.02)


def test_landing_double_eigenvalue_is_degenerate():
    prm = validate_params(ModelParams(1.0, 0.55, 0.05))
    orbit = Orbit(eta=np.arange(5.0), points=np.ones((3, 5)), params=prm)
    with pytest.raises(DegenerateCase):
        landing_analysis(orbit, prm)


def test_p_zero_edge_is_invariant(ref_params):
    man = slow_manifold(ref_params)
    traj = integrate(ref_params, man, (0.0, 0.3), (0.0, 200.0))
    assert traj.status == "captured"
    assert np.all(traj.pq[0] == 0.0)
    pts = np.vstack([traj.pq, man(*traj.pq)])
    orbit = Orbit(eta=traj.eta, points=pts, params=ref_params, end_distance=1e-8)
    rate, nonzero = landing_analysis(orbit, ref_params)
    assert math.isnan(rate) and nonzero is False


def test_start_outside_domain(ref_params):
    man = slow_manifold(ref_params)
    with pytest.raises(DomainExit):
        integrate(ref_params, man, (-1.0, 0.5), (0.0, 1.0))


def test_lift_residual_scales(ref_orbit):
    orbit, _ = ref_orbit
    fast = lift_residual(orbit)
    slow = lift_residual(orbit, scale="slow")
    np.testing.assert_allclose(slow, fast / orbit.params.n, rtol=1e-15)
    assert np.max(fast) <= 10 * orbit.params.n**2


@pytest.mark.parametrize(
    "n, eps, exc",
    [(0.0, 1e-6, NZero), (0.2, 1e-6, OutOfDomain), (0.05, 1e-2, OutOfDomain), (0.05, 1e-9, OutOfDomain)],
)
def test_shooting_preconditions(n, eps, exc):
    prm = validate_params(ModelParams(1.0, 0.8, n))
    with pytest.raises(exc):
        shoot_heteroclinic(prm, eps)


def test_refined_orbit(ref_params, ref_orbit, ref_profile):
    lifted, _ = ref_orbit
    _, refined, asym = ref_profile
    c = derive_constants(ref_params).c
    assert refined.end_distance <= 1e-8
    np.testing.assert_allclose(refined.points[:, -1], [0.0, 1.0, c], atol=1e-8)
    # the 3D orbit differs from the lift by the O(n^2) slow-manifold error
    m0 = np.array([0.0, 0.0, derive_constants(ref_params).a])
    assert orbit_distance(lifted, refined, min_dist_from=m0) <= 2e-2
    assert asym.kappa_fit.direction_error <= 1e-6
    assert asym.landing_rate == pytest.approx(1.0 / 3.0, rel=1e-4)
    # the refined orbit is a trajectory of the full field
    eta = np.linspace(refined.eta[0] + 1, refined.eta[0] + 20, 9)
    h = 1e-5
    d = (refined.at(eta + h) - refined.at(eta - h)) / (2 * h)
    f = np.array([dyn.slow_field(ref_params, refined.at(e)) for e in eta]).T
    assert np.max(np.abs(d - f) / np.maximum(1.0, np.abs(f))) <= 1e-5
