"""Critical manifold at n = 0, its first-order slow-manifold correction, and the
trapping-triangle certificates of the reduced planar flow.

At n = 0 the fast equation f = 0 is solved by the graph r = h0(p, q), a ratio of
affine functions whose level sets are straight lines ``q + lam*rbar*p = const``.
For n > 0 the locally invariant graph is approximated as ``h0 + n*h1`` where
h1 follows from matching O(n) terms of the invariance condition

    f(p, q, h) = n * grad(h) . (p', q')      (fast time)

plus an O(n^2) Hermite term that makes the graph pass through M0 and M1 and be
tangent there to their slow eigenspaces span(X01, X02) and span(X11, X12), which
the exact invariant graph must satisfy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .errors import CertificateFailed, DegenerateNormal, RBarOutOfRange
from .params import ModelParams, ValidatedParams, derive_constants

DEFAULT_MARGIN = 0.25
NORMAL_FLOOR = 1e-10
CSTEP = 1e-30


def _critical(params: ModelParams) -> ModelParams:
    return ModelParams(params.lam, params.m, 0.0)


def graph_constants(lam: float, m: float) -> tuple[float, float]:
    """Return (K, m/lam) with h0 = (K - q) / (m/lam + lam*p)."""
    return (m / lam) * 2.0 / (1.0 + m) - (1.0 - m) / (1.0 + m) + 1.0, m / lam


def h0(params: ModelParams, p, q):
    K, w = graph_constants(params.lam, params.m)
    return (K - q) / (w + params.lam * p)


def h0_grad(params: ModelParams, p, q):
    K, w = graph_constants(params.lam, params.m)
    lam = params.lam
    D = w + lam * p
    return -(K - q) * lam / D**2, -1.0 / D


def normal_eigenvalue(params: ModelParams, p, q):
    """Nonzero eigenvalue (m/lam + lam*p) * h0 of the n = 0 fast linearization."""
    return (params.m / params.lam + params.lam * p) * h0(params, p, q)


def contour_line(params: ModelParams, r_bar: float) -> tuple[float, float]:
    """Coefficients (slope_p, rhs) of the level line ``q + slope_p * p = rhs`` of h0."""
    if not r_bar > 0.0:
        raise RBarOutOfRange(f"r_bar must be positive, got {r_bar}")
    lam, m = params.lam, params.m
    rhs = 2.0 * m / (1.0 + m) - (m / lam) * (r_bar - 2.0 / (1.0 + m))
    return lam * r_bar, rhs


@dataclass(frozen=True)
class Triangle:
    r_bar: float
    q_intercept: float
    p_intercept: float

    def contains(self, p, q, tol: float = 0.0):
        p = np.asarray(p)
        q = np.asarray(q)
        return (p >= -tol) & (q >= -tol) & (
            q / self.q_intercept + p / self.p_intercept <= 1.0 + tol
        )

    def hypotenuse(self, num: int) -> np.ndarray:
        """``num`` points on the hypotenuse, endpoints excluded; shape (2, num)."""
        t = (np.arange(num) + 0.5) / num
        return np.array([t * self.p_intercept, (1.0 - t) * self.q_intercept])


def build_triangle(params: ModelParams, r_bar: float | None = None) -> Triangle:
    c0 = derive_constants(_critical(params)).c
    if r_bar is None:
        r_bar = 0.5 * c0
    if not 0.0 < r_bar < c0:
        raise RBarOutOfRange(f"need 0 < r_bar < c(lam, m, 0) = {c0!r}, got {r_bar!r}")
    slope, qi = contour_line(params, r_bar)
    return Triangle(r_bar=float(r_bar), q_intercept=qi, p_intercept=qi / slope)


def domain_margin(params: ModelParams, tri: Triangle) -> float:
    """Rectangle margin around T: 25% unless h0 would approach zero at the far corner.

    h0 at (1+mu)*(p_int, q_int) has numerator (m/lam)*r_bar - mu*q_int.
    """
    ratio = (params.m / params.lam) * tri.r_bar / tri.q_intercept
    return min(DEFAULT_MARGIN, 0.5 * ratio)


def _df_dn(params: ModelParams, p, q, r):
    """Partial derivative of f with respect to n, at the given n."""
    lam, m, n = params.lam, params.m, params.n
    s = 1.0 + m - n
    k0 = (2.0 - n) / s
    dk0 = (1.0 - m) / s**2
    dk1 = 2.0 / s**2
    return r * (-(r - k0) / lam - (m - n) / lam * dk0 + dk1)


def _df_dr(params: ModelParams, p, q, r):
    k0 = (2.0 - params.n) / (1.0 + params.m - params.n)
    lam, m, n = params.lam, params.m, params.n
    g3 = (m - n) / lam * (r - k0) + (1.0 - m + n) / (1.0 + m - n) - 1.0 + q + lam * p * r
    return g3 + r * ((m - n) / lam + lam * p)


def h1(params: ModelParams, p, q):
    """First-order coefficient of the slow manifold (per unit n)."""
    crit = _critical(params)
    r0 = h0(crit, p, q)
    hp, hq = h0_grad(crit, p, q)
    drift = hp * dyn.p_rate(crit, p, q, r0) + hq * dyn.q_rate(crit, p, q, r0)
    return (drift - _df_dn(crit, p, q, r0)) / _df_dr(crit, p, q, r0)


@dataclass(frozen=True)
class CriticalManifold:
    """Approximate slow manifold r = graph(p, q) on the rectangle ``domain``.

    ``order`` is 0 (h0 only) or 1 (h0 + n*h1, plus the Hermite term when ``pin``
    is nonzero). ``pin`` holds the mismatches (value, d/dq, d/dp) at M0 then at M1.
    """

    params: ValidatedParams
    triangle: Triangle
    domain: tuple[float, float, float, float]  # p_lo, p_hi, q_lo, q_hi
    order: int = 1
    pin: tuple[float, ...] = field(default=(0.0,) * 6)

    @property
    def n(self) -> float:
        return self.params.n

    def h0(self, p, q):
        return h0(self.params, p, q)

    def h1(self, p, q):
        return h1(self.params, p, q)

    def __call__(self, p, q):
        r = h0(self.params, p, q)
        if self.order == 0 or self.n == 0.0:
            return r
        return r + self.n * h1(self.params, p, q) + _hermite(self.pin, p, q)

    def grad(self, p, q):
        """Gradient of the graph by complex-step differentiation."""
        gp = np.imag(self(p + 1j * CSTEP, q)) / CSTEP
        gq = np.imag(self(p, q + 1j * CSTEP)) / CSTEP
        return gp, gq

    def contains(self, p, q) -> bool:
        p_lo, p_hi, q_lo, q_hi = self.domain
        return bool(p_lo <= p <= p_hi and q_lo <= q <= q_hi)

    def grid(self, num: int) -> tuple[np.ndarray, np.ndarray]:
        p_lo, p_hi, q_lo, q_hi = self.domain
        return np.meshgrid(np.linspace(p_lo, p_hi, num), np.linspace(q_lo, q_hi, num))


def slow_manifold(
    params: ValidatedParams,
    r_bar: float | None = None,
    *,
    order: int = 1,
    pin: bool = False,
    check_density: int = 101,
) -> CriticalManifold:
    """Build the approximate slow manifold over the rectangle around T.

    With ``pin`` the O(n^2) Hermite term fixes value and tangent plane at M0 and M1;
    without it the graph is the plain truncation h0 + n*h1.
    """
    tri = build_triangle(params, r_bar)
    mu = domain_margin(params, tri)
    domain = (0.0, (1.0 + mu) * tri.p_intercept, 0.0, (1.0 + mu) * tri.q_intercept)
    man = CriticalManifold(params=params, triangle=tri, domain=domain, order=order)
    P, Q = man.grid(check_density)
    lam_min = float(np.min(_df_dr(_critical(params), P, Q, h0(params, P, Q))))
    if lam_min <= NORMAL_FLOOR:
        raise DegenerateNormal(
            f"normal eigenvalue min {lam_min:.3e} <= {NORMAL_FLOOR:g} on the domain"
        )
    if pin and order == 1 and params.n > 0.0:
        man = CriticalManifold(
            params=params, triangle=tri, domain=domain, order=order,
            pin=_equilibrium_pin(man),
        )
    return man


def _hermite(pin, p, q):
    v0, dq0, dp0, v1, dq1, dp1 = pin
    q2, q3 = q * q, q * q * q
    return (
        v0 * (2.0 * q3 - 3.0 * q2 + 1.0)
        + dq0 * (q3 - 2.0 * q2 + q)
        + v1 * (3.0 * q2 - 2.0 * q3)
        + dq1 * (q3 - q2)
        + p * (dp0 * (1.0 - q) + dp1 * q)
    )


def _plane_slopes(u: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    """(dr/dp, dr/dq) of the plane spanned by u = (0, 1, u_r) and w (w_p != 0)."""
    sq = u[2] / u[1]
    return (w[2] - w[1] * sq) / w[0], sq


def _equilibrium_pin(man: CriticalManifold) -> tuple[float, ...]:
    prm = man.params
    k = derive_constants(prm)
    unpinned = CriticalManifold(params=prm, triangle=man.triangle, domain=man.domain, order=1)
    x0 = dyn.unstable_node_vectors(prm)
    x1, _ = dyn.saddle_vectors(prm)
    out = []
    for (q, r_eq), (u, w) in (((0.0, k.a), (x0[0], x0[1])), ((1.0, k.c), (x1[0], x1[1]))):
        sp, sq = _plane_slopes(u, w)
        gp, gq = unpinned.grad(0.0, q)
        out += [r_eq - unpinned(0.0, q), sq - gq, sp - gp]
    return tuple(float(x) for x in out)


def reduced_field(params: ModelParams, p, q, manifold: CriticalManifold):
    r = manifold(p, q)
    return dyn.p_rate(params, p, q, r), dyn.q_rate(params, p, q, r)


def invariance_defect(manifold: CriticalManifold, p, q):
    """Fast-time invariance residual f(p, q, h) - n * grad(h) . (p', q')."""
    prm = manifold.params
    r = manifold(p, q)
    gp, gq = manifold.grad(p, q)
    drift = gp * dyn.p_rate(prm, p, q, r) + gq * dyn.q_rate(prm, p, q, r)
    return dyn.fast_r_rate(prm, p, q, r) - prm.n * drift


def triangle_samples(tri: Triangle, num: int) -> tuple[np.ndarray, np.ndarray]:
    """Points of a uniform num x num grid on the bounding box that lie in T."""
    P, Q = np.meshgrid(np.linspace(0, tri.p_intercept, num), np.linspace(0, tri.q_intercept, num))
    keep = tri.contains(P, Q)
    return P[keep], Q[keep]


def max_defect(manifold: CriticalManifold, num: int = 121) -> float:
    P, Q = triangle_samples(manifold.triangle, num)
    return float(np.max(np.abs(invariance_defect(manifold, P, Q))))


def normal_hyperbolicity_certificate(
    params: ModelParams, manifold: CriticalManifold, sample_density: int = 200
) -> float:
    P, Q = manifold.grid(sample_density)
    val = float(np.min(normal_eigenvalue(params, P, Q)))
    if not val > 0.0:
        raise CertificateFailed(f"normal eigenvalue minimum {val:.3e} is not positive")
    return val


def delta_bound(tri: Triangle) -> float:
    """Analytic lower bound -p_int*q_int*(1 - q_int) of the n = 0 inward flux."""
    return -tri.p_intercept * tri.q_intercept * (1.0 - tri.q_intercept)


def inward_flux(params: ModelParams, tri: Triangle, boundary_pt, manifold: CriticalManifold):
    """Inward normal component (-q_int, -p_int) . (p', q') on the hypotenuse.

    Returns ``(flux, delta)`` where delta is the analytic n = 0 lower bound.
    """
    p, q = boundary_pt
    pd, qd = reduced_field(params, p, q, manifold)
    return -tri.q_intercept * pd - tri.p_intercept * qd, delta_bound(tri)


def inward_flux_n0_closed_form(params: ModelParams, tri: Triangle, p):
    """The n = 0 flux along the hypotenuse written as delta plus a nonnegative p-term."""
    lam, m = params.lam, params.m
    qb = tri.q_intercept
    slack = 2.0 * m / (1.0 + m) - (m / lam) * (1.0 - 2.0 / (1.0 + m)) - qb
    return delta_bound(tri) - p * qb / m * slack


def parabola_fit_error(params: ModelParams, manifold: CriticalManifold, starts, span: float = 6.0):
    """m = 1, n = 0 diagnostic: max relative spread of p/q^2 along reduced orbits."""
    from scipy.integrate import solve_ivp

    def rhs(_t, y):
        return reduced_field(params, y[0], y[1], manifold)

    worst = 0.0
    for p0, q0 in starts:
        sol = solve_ivp(rhs, (0.0, span), [p0, q0], rtol=1e-11, atol=1e-14, method="DOP853")
        k = sol.y[0] / sol.y[1] ** 2
        worst = max(worst, float(np.ptp(k) / abs(np.mean(k))))
    return worst


def manifold_report(params: ValidatedParams, r_bar: float | None = None, hyp_samples: int = 1000) -> dict:
    man = slow_manifold(params, r_bar)
    tri = man.triangle
    P, Q = tri.hypotenuse(hyp_samples)
    flux, delta = inward_flux(params, tri, (P, Q), man)
    report = {
        "r_bar": tri.r_bar,
        "intercepts": {"p": tri.p_intercept, "q": tri.q_intercept},
        "domain_margin": domain_margin(params, tri),
        "min_flux": float(np.min(flux)),
        "delta": delta,
        "min_normal_eigenvalue": normal_hyperbolicity_certificate(params, man),
    }
    if params.n > 0.0:
        report["defect_h0"] = max_defect(
            CriticalManifold(params=params, triangle=tri, domain=man.domain, order=0)
        )
        report["defect_h0_plus_nh1"] = max_defect(man)
        report["defect_pinned"] = max_defect(slow_manifold(params, r_bar, pin=True))
    else:
        report["defect_h0"] = report["defect_h0_plus_nh1"] = report["defect_pinned"] = 0.0
    return report

