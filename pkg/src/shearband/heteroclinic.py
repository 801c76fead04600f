"""Heteroclinic orbit M0 -> M1 built on the approximate slow manifold.

The reduced planar flow is integrated forward from the strong unstable direction
X02 of M0 until it is captured by M1 and then lifted to 3D through the manifold
graph. Forward 3D shooting is avoided: the normal direction repels at rate O(1/n).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import dynamics as dyn
from .errors import (
    DegenerateCase,
    DomainExit,
    FitFailure,
    InconsistentLambda,
    NoCapture,
    NZero,
    OutOfDomain,
    StepFailure,
)
from .manifold import CriticalManifold, reduced_field, slow_manifold
from .params import (
    ModelParams,
    ValidatedParams,
    derive_constants,
    is_double_eigenvalue_case,
    lambda_from_initial_data,
)

log = logging.getLogger(__name__)

N_PROBE = 0.1
RESAMPLE_STEP = 0.01


@dataclass(frozen=True)
class Controls:
    rel_tol: float = 1e-11
    abs_tol: float = 1e-14
    max_step: float = math.inf
    max_span: float = 400.0
    capture_tol: float = 1e-8


@dataclass
class PlanarTrajectory:
    eta: np.ndarray
    pq: np.ndarray  # shape (2, N)
    status: str  # "span", "captured", "domain-exit"
    dense: Callable[[np.ndarray], np.ndarray]


def integrate(
    params: ModelParams,
    manifold: CriticalManifold,
    start,
    span: tuple[float, float],
    controls: Controls = Controls(),
    target: tuple[float, float] | None = (0.0, 1.0),
) -> PlanarTrajectory:
    """Integrate the reduced field with an adaptive embedded Runge-Kutta pair (DOP853).

    Terminates at the end of ``span``, when the lifted state comes within
    ``controls.capture_tol`` of the lifted ``target``, or when it leaves the domain.
    """
    p0, q0 = (float(x) for x in start)
    if not manifold.contains(p0, q0):
        raise DomainExit(f"start {(p0, q0)} outside the manifold domain {manifold.domain}")
    t0, t1 = span
    t1 = min(t1, t0 + controls.max_span)

    def rhs(_t, y):
        return reduced_field(params, y[0], y[1], manifold)

    events = []
    if target is not None:
        tp, tq = target
        tr = manifold(tp, tq)

        def capture(_t, y):
            r = manifold(y[0], y[1])
            d = math.sqrt((y[0] - tp) ** 2 + (y[1] - tq) ** 2 + (r - tr) ** 2)
            return d - 0.99 * controls.capture_tol

        capture.terminal = True
        capture.direction = -1
        events.append(capture)

    p_lo, p_hi, q_lo, q_hi = manifold.domain
    slack = 1e-12

    def leave(_t, y):
        return min(y[0] - p_lo, p_hi - y[0], y[1] - q_lo, q_hi - y[1]) + slack

    leave.terminal = True
    leave.direction = -1
    events.append(leave)

    sol = solve_ivp(
        rhs, (t0, t1), [p0, q0], method="DOP853", rtol=controls.rel_tol,
        atol=controls.abs_tol, max_step=controls.max_step, events=events, dense_output=True,
    )
    if sol.status == -1:
        raise StepFailure(sol.message)
    status = "span"
    if sol.status == 1:
        fired = [len(te) > 0 for te in sol.t_events]
        if target is not None and fired[0]:
            status = "captured"
        else:
            raise DomainExit(f"trajectory left the domain at eta={sol.t[-1]:.6g}, state {sol.y[:, -1]}")
    return PlanarTrajectory(eta=sol.t, pq=sol.y, status=status, dense=sol.sol)


@dataclass
class Orbit:
    """Sampled trajectory (eta strictly increasing, points shape (3, N))."""

    eta: np.ndarray
    points: np.ndarray
    source_label: str = "M0"
    target_label: str = "M1"
    converged: bool = False
    end_distance: float = math.nan
    epsilon: float | None = None
    params: ValidatedParams | None = None
    manifold: CriticalManifold | None = field(default=None, repr=False)
    dense: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.eta.size

    @property
    def p(self) -> np.ndarray:
        return self.points[0]

    @property
    def q(self) -> np.ndarray:
        return self.points[1]

    @property
    def r(self) -> np.ndarray:
        return self.points[2]

    def at(self, eta) -> np.ndarray:
        """Points at arbitrary eta (dense output when available, else linear)."""
        eta = np.asarray(eta, dtype=float)
        if self.dense is not None:
            out = np.asarray(self.dense(eta))
            if out.shape[0] == 3:
                return out
            if self.manifold is not None:
                return np.array([out[0], out[1], self.manifold(out[0], out[1])])
        return np.array([np.interp(eta, self.eta, comp) for comp in self.points])


@dataclass(frozen=True)
class KappaFit:
    kappa: float
    direction_error: float
    log_slope: float
    residual: float
    window: tuple[float, float]
    admixture: float = 0.0


@dataclass(frozen=True)
class OrbitAsymptotics:
    kappa2_bar: float
    eta0: float
    landing_rate: float
    kappa2_prime_nonzero: bool
    kappa_fit: KappaFit | None = None


def _lift(manifold: CriticalManifold, pq: np.ndarray) -> np.ndarray:
    return np.vstack([pq, manifold(pq[0], pq[1])[None, :]])


def shoot_heteroclinic(
    params: ValidatedParams,
    epsilon: float = 1e-6,
    controls: Controls = Controls(),
    *,
    r_bar: float | None = None,
    Gamma0: float = 1.0,
) -> tuple[Orbit, OrbitAsymptotics]:
    """Construct the M0 -> M1 heteroclinic leaving M0 along X02.

    The returned time normalization puts the start point at
    ``eta_s = log(eps / |X02_pq|) / 2`` so that kappa2_bar is close to 1.
    ``eta0`` in the asymptotics is the shift for the given Gamma0 with U0 = a*Gamma0.
    """
    if params.n == 0.0:
        raise NZero("shoot_heteroclinic")
    if params.n > N_PROBE:
        raise OutOfDomain("n-probe", f"n = {params.n} exceeds the certified range n <= {N_PROBE}")
    if not 1e-8 <= epsilon <= 1e-3:
        raise OutOfDomain("epsilon", f"epsilon must lie in [1e-8, 1e-3], got {epsilon}")
    man = slow_manifold(params, r_bar, pin=True)
    k = derive_constants(params)
    x02 = dyn.unstable_node_vectors(params)[1]
    direction = x02[:2] / np.linalg.norm(x02[:2])
    start = epsilon * direction
    eta_s = 0.5 * math.log(epsilon / np.linalg.norm(x02[:2]))

    traj = integrate(params, man, start, (eta_s, eta_s + controls.max_span), controls)
    if traj.status != "captured":
        raise NoCapture(
            f"no capture by M1 within span {controls.max_span}; last state {traj.pq[:, -1]}"
        )
    eta_end = traj.eta[-1]
    grid = np.arange(eta_s, eta_end, RESAMPLE_STEP)
    if grid[-1] < eta_end:
        grid = np.append(grid, eta_end)
    points = _lift(man, np.asarray(traj.dense(grid)))
    m1 = np.array([0.0, 1.0, k.c])
    end_distance = float(np.linalg.norm(points[:, -1] - m1))
    orbit = Orbit(
        eta=grid, points=points, converged=end_distance <= controls.capture_tol * (1 + 1e-6),
        end_distance=end_distance, epsilon=epsilon, params=params, manifold=man, dense=traj.dense,
    )
    return orbit, asymptotics(orbit, params, Gamma0)


def asymptotics(orbit: Orbit, params: ValidatedParams, Gamma0: float = 1.0) -> OrbitAsymptotics:
    """kappa2_bar, the shift for (Gamma0, a*Gamma0) and the landing rate of ``orbit``.

    In the double-eigenvalue case the rate is reported as nan.
    """
    fit = extract_kappa(orbit, params)
    try:
        rate, nonzero = landing_analysis(orbit, params)
    except DegenerateCase:
        rate, nonzero = math.nan, bool(np.max(orbit.p) > 1e-10)
    eta0 = compute_shift(Gamma0, derive_constants(params).a * Gamma0, params, fit.kappa)
    return OrbitAsymptotics(
        kappa2_bar=fit.kappa, eta0=eta0, landing_rate=rate,
        kappa2_prime_nonzero=nonzero, kappa_fit=fit,
    )


def _m0(params: ModelParams) -> np.ndarray:
    return np.array([0.0, 0.0, derive_constants(params).a])


def extract_kappa(
    orbit: Orbit,
    params: ModelParams,
    *,
    window_start: float | None = None,
    width: float = 2.0,
    max_direction_error: float = 1e-2,
) -> KappaFit:
    """Fit exp(-2 eta) (phi - M0) -> kappa * X02 on an early window.

    Each component of w = exp(-2 eta)(phi - M0) is fitted as
    A + B exp(2 eta) + C exp(4 eta) + D exp(-eta): the exp(2 eta), exp(4 eta)
    terms are the nonlinear corrections and exp(-eta) absorbs a small X01
    admixture. kappa is the projection of A on X02. The fit is rejected when
    the distance to M0 does not grow like exp(2 eta), when A is not parallel
    to X02, or when the X01 admixture is not small on the window.
    """
    x02 = dyn.unstable_node_vectors(params)[1]
    disp = orbit.points - _m0(params)[:, None]
    dist = np.linalg.norm(disp, axis=0)
    eps = orbit.epsilon if orbit.epsilon is not None else float(dist[0])
    if window_start is None:
        inside = np.flatnonzero((dist >= 10.0 * eps) & (dist <= 100.0 * eps))
        if inside.size == 0:
            raise FitFailure("orbit has no samples with |phi - M0| in [10 eps, 100 eps]")
        window_start = float(orbit.eta[inside[0]])
    sel = (orbit.eta >= window_start) & (orbit.eta <= window_start + width)
    if np.count_nonzero(sel) < 8:
        raise FitFailure("too few samples in the fit window")
    eta = orbit.eta[sel]
    w = disp[:, sel] * np.exp(-2.0 * eta)
    log_slope = float(np.polyfit(eta, np.log(dist[sel]), 1)[0])

    shift = eta - eta[0]
    design = np.column_stack(
        [np.ones_like(eta), np.exp(2.0 * shift), np.exp(4.0 * shift), np.exp(-shift)]
    )
    coef, *_ = np.linalg.lstsq(design, w.T, rcond=None)
    # the columns are scaled by exp(2 eta0) etc.; the constant column is unaffected
    limit = coef[0]
    lnorm = max(np.linalg.norm(limit), 1e-300)
    resid = float(np.max(np.abs(design @ coef - w.T)) / lnorm)
    admixture = float(np.linalg.norm(coef[3]) / lnorm)
    norm = lnorm * np.linalg.norm(x02)
    direction_error = float(np.linalg.norm(np.cross(limit, x02)) / norm)
    kappa = float(limit @ x02 / (x02 @ x02))
    if (
        abs(log_slope - 2.0) > 0.25
        or direction_error > max_direction_error
        or admixture > 0.1
        or not kappa > 0
    ):
        raise FitFailure(
            f"orbit does not leave M0 along X02: log-slope {log_slope:.3f} (expected 2), "
            f"direction error {direction_error:.2e}, X01 admixture {admixture:.2e}, kappa {kappa:.3e}"
        )
    return KappaFit(
        kappa=kappa, direction_error=direction_error, log_slope=log_slope,
        residual=resid, window=(float(eta[0]), float(eta[-1])), admixture=admixture,
    )


def compute_shift(Gamma0: float, U0: float, params: ModelParams, kappa2_bar: float) -> float:
    lam = lambda_from_initial_data(Gamma0, U0, params.m, params.n)
    if abs(lam - params.lam) > 1e-10 * abs(params.lam):
        raise InconsistentLambda(
            f"(Gamma0, U0) = ({Gamma0}, {U0}) imply lambda = {lam!r}, params have {params.lam!r}"
        )
    if not kappa2_bar > 0:
        raise FitFailure(f"kappa2_bar must be positive, got {kappa2_bar}")
    m, n = params.m, params.n
    return 0.5 * math.log(Gamma0 ** (1.0 + m) * U0 ** (-n) / kappa2_bar)


def expected_landing_rate(params: ModelParams) -> float:
    """Decay rate of p towards M1: (1 - m + n)/(m - n)."""
    return (1.0 - params.m + params.n) / (params.m - params.n)


def landing_analysis(orbit: Orbit, params: ModelParams) -> tuple[float, bool]:
    """Fit p ~ kappa2' exp(-rate * eta) on the approach to M1.

    Uses samples with p between 1e-3 * max(p) and 1e3 * capture distance.
    """
    if is_double_eigenvalue_case(params):
        raise DegenerateCase("m - n = 1/2: p carries an eta*exp(-eta) correction; rate fit skipped")
    p = orbit.p
    pmax = float(np.max(p)) if p.size else 0.0
    if not pmax > 1e-10:
        return math.nan, False
    imax = int(np.argmax(p))
    floor = max(1e3 * (orbit.end_distance if math.isfinite(orbit.end_distance) else 0.0), 1e-12)
    sel = np.zeros_like(p, dtype=bool)
    sel[imax:] = (p[imax:] <= 1e-3 * pmax) & (p[imax:] >= floor)
    if np.count_nonzero(sel) < 5:
        raise FitFailure("not enough tail samples to fit the landing rate")
    slope, intercept = np.polyfit(orbit.eta[sel], np.log(p[sel]), 1)
    amplitude = math.exp(intercept)
    return float(-slope), bool(amplitude > 1e-10)


def _polyline(orbit: Orbit, step: float = 1e-3) -> np.ndarray:
    """Vertices of a fine polyline through the orbit (dense output when available)."""
    if orbit.dense is None:
        return orbit.points
    eta = np.arange(orbit.eta[0], orbit.eta[-1], step)
    return orbit.at(np.append(eta, orbit.eta[-1]))


def distance_to_curve(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Distance from each column of ``points`` to the polyline through ``vertices``."""
    tree = cKDTree(vertices.T)
    _, idx = tree.query(points.T)
    best = np.linalg.norm(vertices[:, idx] - points, axis=0)
    last = vertices.shape[1] - 1
    for lo in (idx - 1, idx):
        lo = np.clip(lo, 0, last - 1)
        a = vertices[:, lo]
        seg = vertices[:, lo + 1] - a
        t = np.clip(np.sum((points - a) * seg, axis=0) / np.maximum(np.sum(seg * seg, axis=0), 1e-300), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(a + t * seg - points, axis=0))
    return best


def orbit_distance(a: Orbit, b: Orbit, *, min_dist_from: np.ndarray | None = None) -> float:
    """Hausdorff distance between the point sets of two orbits, each sample of one
    measured against a fine polyline (dense output) of the other.

    Samples closer to ``min_dist_from`` than either orbit's starting point are
    ignored so that orbits started at different places can be compared.
    """
    cut = 0.0
    if min_dist_from is not None:
        cut = max(np.linalg.norm(o.points[:, 0] - min_dist_from) for o in (a, b))
    worst = 0.0
    for src, dst in ((a, b), (b, a)):
        pts = src.points
        if min_dist_from is not None:
            pts = pts[:, np.linalg.norm(pts - min_dist_from[:, None], axis=0) >= cut]
        if pts.size:
            worst = max(worst, float(np.max(distance_to_curve(pts, _polyline(dst)))))
    return worst


def restart_from(orbit: Orbit, eta_start: float, controls: Controls = Controls()) -> Orbit:
    """Re-integrate the reduced flow from the orbit point at ``eta_start``."""
    start = orbit.at(eta_start)[:2]
    traj = integrate(
        orbit.params, orbit.manifold, start, (0.0, controls.max_span), controls
    )
    grid = np.arange(0.0, traj.eta[-1], RESAMPLE_STEP)
    pts = _lift(orbit.manifold, np.asarray(traj.dense(grid)))
    return replace(
        orbit, eta=grid, points=pts, dense=traj.dense, converged=traj.status == "captured",
        end_distance=float(np.linalg.norm(pts[:, -1] - np.array([0.0, 1.0, derive_constants(orbit.params).c]))),
        epsilon=None,
    )


def lift_residual(orbit: Orbit, *, scale: str = "fast") -> np.ndarray:
    """Pointwise residual |d(phi)/d(eta) - field(phi)| of the lifted orbit.

    p and q satisfy the reduced flow exactly, so only the r-component remains:
    n * grad(h) . (p', q') - f(phi) in fast time (O(n^2)), or that divided by n in
    slow time (O(n)).
    """
    man, prm = orbit.manifold, orbit.params
    p, q, r = orbit.points
    gp, gq = man.grad(p, q)
    drift = gp * dyn.p_rate(prm, p, q, r) + gq * dyn.q_rate(prm, p, q, r)
    res = np.abs(prm.n * drift - dyn.fast_r_rate(prm, p, q, r))
    return res / prm.n if scale == "slow" else res


@dataclass(frozen=True)
class Refinement:
    theta: float
    bracket_width: float
    start_distance: float
    deviation: float
    """Hausdorff distance to the lifted orbit it was seeded from."""


def _stable_plane(params: ModelParams) -> tuple[np.ndarray, np.ndarray, float, bool]:
    info = dyn.equilibrium(params, "M1")
    return info.eigenvectors[0], info.eigenvectors[1], info.eigenvalues[1], info.degenerate


def _matched_tail(params: ModelParams, target: np.ndarray, radius: float, rtol: float, guess: float | None = None):
    """Backward solution from M1 + radius*(s e1 +- e2)/|.| whose crossing of the sphere
    |y - M1| = |target - M1| has the same e1-coefficient as ``target``.

    The state is the displacement from M1; the crossing time is ``t_events[0][0]``
    and the dense output covers [crossing, 0]. The e1-coefficient grows by about
    (|target - M1| / radius)**2 relative to the e2 one on the way out, so the
    radius ratio is kept moderate for the match to stay well conditioned.
    ``guess`` centres the search for s; returns (solution, s).
    """
    e1, e2, _, _ = _stable_plane(params)
    m1 = np.array([0.0, 1.0, derive_constants(params).c])
    plane = np.column_stack([e1, e2])
    d_join = float(np.linalg.norm(target - m1))
    c_target = np.linalg.lstsq(plane, target - m1, rcond=None)[0]
    side = math.copysign(1.0, c_target[1])

    def shoot(s: float, dense: bool = False):
        def cross(_t, w):
            return np.linalg.norm(w) - d_join

        cross.terminal = True
        w0 = radius * (s * e1 + side * e2) / np.linalg.norm(s * e1 + side * e2)
        return solve_ivp(
            lambda _t, w: dyn.slow_field_about(params, m1, w), (0.0, -1e3), w0, method="DOP853",
            rtol=rtol, atol=1e-3 * rtol * radius, events=cross, dense_output=dense,
        )

    def mismatch(s: float) -> float:
        sol = shoot(s)
        if not sol.t_events[0].size:
            raise NoCapture("tail trajectory did not reach the join sphere")
        c = np.linalg.lstsq(plane, sol.y[:, -1], rcond=None)[0]
        return c[0] - c_target[0]

    centre, width = (0.0, 1e-6) if guess is None else (guess, max(0.05 * abs(guess), 1e-13))
    while mismatch(centre - width) * mismatch(centre + width) > 0:
        width *= 10.0
        if width > 1e2:
            raise NoCapture("could not bracket the tail start")
    s_star = brentq(mismatch, centre - width, centre + width, xtol=1e-15)
    return shoot(s_star, dense=True), s_star


def refine_orbit(
    orbit: Orbit,
    *,
    start_distance: float = 1e-2,
    end_distance: float = 1e-6,
    sign_radius: float = 1e-7,
    join_distance: float = 3e-2,
    rtol: float = 1e-12,
) -> tuple[Orbit, Refinement]:
    """Heteroclinic of the full 3D system by backward shooting from M1.

    Starts are parametrized by an angle theta on M1's stable eigenplane at
    ``start_distance``. Integrated backward, orbits on one side of the
    heteroclinic reach M0 along +X01 while the others leave; the separatrix
    between them is the orbit tangent to X02. theta is the root of the
    X01-coefficient near M0 (escape counts as negative), bracketed around the
    angle at which the lifted ``orbit`` passes. The coefficient is read at
    ``sign_radius``, where its nonlinear part (relative size ~ radius**1.5) no
    longer biases the separatrix. Near M1 the body is continued
    by stable-manifold trajectories matched in stages (see ``_matched_tail``).
    """
    prm = orbit.params
    k = derive_constants(prm)
    m0, m1 = _m0(prm), np.array([0.0, 1.0, k.c])
    e1, e2, _, _ = _stable_plane(prm)
    basis0 = dyn.unstable_node_vectors(prm).T

    dist = np.linalg.norm(orbit.points - m1[:, None], axis=0)
    idx = int(np.flatnonzero(dist >= start_distance)[-1])
    plane = np.linalg.lstsq(np.column_stack([e1, e2]), orbit.points[:, idx] - m1, rcond=None)[0]
    guess = math.atan2(plane[1], plane[0])

    def start(theta: float) -> np.ndarray:
        return m1 + start_distance * (math.cos(theta) * e1 + math.sin(theta) * e2)

    def backward(theta: float, radius: float, dense: bool = False, tol: float = rtol):
        # the state is the displacement z = y - M0, so tolerances resolve the approach to M0
        def arrive(_t, z):
            return np.linalg.norm(z) - radius

        def leave(_t, z):
            return np.linalg.norm(z) - 10.0

        arrive.terminal = leave.terminal = True
        return solve_ivp(
            lambda _t, z: dyn.slow_field_about(prm, m0, z), (0.0, -orbit_span), start(theta) - m0,
            method="DOP853", rtol=tol, atol=1e-15, events=(arrive, leave), dense_output=dense,
        )

    def coefficient(theta: float, tol: float = rtol) -> float:
        # asinh of the X01- over X02-coefficient on arrival: linear in theta at the
        # separatrix and close to linear further out; escape and the wrong
        # quadrant count as a large negative value
        sol = backward(theta, sign_radius, tol=tol)
        if sol.status != 1 or not sol.t_events[0].size:
            return -50.0
        c = np.linalg.solve(basis0, sol.y[:, -1])
        return math.asinh(c[0] / c[1]) if c[1] > 0 else -50.0

    def bracket(f, center: float, width: float, grow: float) -> tuple[float, float]:
        f0 = f(center)
        while width <= 0.5:
            lo, hi = center - width, center + width
            flo, fhi = f(lo), f(hi)
            if flo * fhi < 0:
                return lo, hi
            if flo * f0 < 0:
                return lo, center
            if fhi * f0 < 0:
                return center, hi
            width *= grow
        raise NoCapture("backward shooting found no sign change around the lifted angle")

    orbit_span = 4.0 * (orbit.eta[-1] - orbit.eta[0])
    # a cheap pass at loose tolerance locates the separatrix to ~1e-9, the
    # polish at full tolerance stops where integration noise takes over (~1e-13)
    loose = max(rtol, 1e-8)
    coarse = lambda th: coefficient(th, loose)
    lo, hi = bracket(coarse, guess, 1e-6, 4.0)
    theta_c = brentq(coarse, lo, hi, xtol=1e-10, rtol=1e-15)
    lo, hi = bracket(coefficient, theta_c, 1e-9, 10.0)
    theta = brentq(coefficient, lo, hi, xtol=1e-13, rtol=1e-15)

    sol = backward(theta, end_distance, dense=True)
    if not sol.t_events[0].size:
        raise NoCapture("refined backward orbit did not reach M0")
    t_end = float(sol.t[-1])
    eta_first = 0.5 * math.log(end_distance / np.linalg.norm(basis0[:, 1]))
    offset = eta_first - t_end  # eta = t + offset

    # The body starts on the tangent plane, O(start_distance**2) off the stable
    # manifold of M1; that error decays quickly backward. From the join sphere on,
    # the approach to M1 is a chain of stable-manifold trajectories, each shot back
    # from 1/100 of the current distance and matched to the previous piece, which
    # it replaces from 1/10 of that distance on.
    t_join = brentq(
        lambda t: np.linalg.norm(sol.sol(t) + m0 - m1) - join_distance, t_end, 0.0, xtol=1e-14
    )
    eta_join = t_join + offset
    pieces = []  # (eta at piece start, solution, solver time at piece start)
    y, eta_k = sol.sol(t_join) + m0, eta_join
    target = max(orbit.end_distance, 1e-12)
    s_k = None
    while True:
        d = float(np.linalg.norm(y - m1))
        # on the stable manifold the e1 part is slaved to (e2 part)**2, so the
        # start parameter scales with the distance and seeds the next stage
        tail, s_k = _matched_tail(prm, y, d / 100.0, rtol, None if s_k is None else s_k / 10.0)
        t_cross = float(tail.t_events[0][0])
        pieces.append((eta_k, tail, t_cross))
        if d / 10.0 <= target:
            eta_stop = eta_k - t_cross
            break
        t_next = brentq(lambda t: np.linalg.norm(tail.sol(t)) - d / 10.0, t_cross, 0.0, xtol=1e-14)
        y, eta_k = tail.sol(t_next) + m1, eta_k + (t_next - t_cross)
    starts = np.array([p[0] for p in pieces])

    def dense(eta):
        eta = np.asarray(eta, dtype=float)
        flat = np.atleast_1d(eta)
        out = np.empty((3, flat.size))
        body = flat <= eta_join
        if np.any(body):
            out[:, body] = sol.sol(flat[body] - offset) + m0[:, None]
        which = np.searchsorted(starts, flat, side="right") - 1
        for k, (eta_k, tail, t_cross) in enumerate(pieces):
            sel = ~body & (which == k)
            if np.any(sel):
                t = np.minimum(t_cross + flat[sel] - eta_k, 0.0)
                out[:, sel] = tail.sol(t) + m1[:, None]
        return out if eta.ndim else out[:, 0]

    grid = np.arange(eta_first, eta_stop, RESAMPLE_STEP)
    pts = dense(grid)
    tail_dist = np.linalg.norm(pts - m1[:, None], axis=0)
    stop = np.flatnonzero(tail_dist <= orbit.end_distance)
    if stop.size:
        grid, pts = grid[: stop[0] + 1], pts[:, : stop[0] + 1]
    refined = Orbit(
        eta=grid, points=pts, converged=True,
        end_distance=float(np.linalg.norm(pts[:, -1] - m1)), epsilon=end_distance,
        params=prm, manifold=None, dense=dense,
    )
    dev = orbit_distance(orbit, refined, min_dist_from=m0)
    return refined, Refinement(
        theta=theta, bracket_width=hi - lo, start_distance=start_distance, deviation=dev,
    )
