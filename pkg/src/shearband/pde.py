"""Explicit finite differences for gamma_t = v_x, v_t = (gamma^-m v_x^n)_x.

Method of lines on a uniform grid over [-L, L]: u is the centered difference of
v, sigma = gamma^-m u^n, v_t is the centered difference of sigma and gamma_t = u.
Time stepping is the explicit midpoint rule with dt = 0.4 dx^2 / max(nu), where
nu = n gamma^-m u^(n-1) is the effective diffusivity.

Boundaries are imposed through a ``Boundary`` policy: Dirichlet values on the
end nodes plus one ghost node of v on each side, or periodic wrap-around.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, replace
from typing import Callable, Protocol

import numpy as np

from .errors import OutOfDomain, StabilityViolation
from .params import ModelParams

U_FLOOR = 1e-8
CFL = 0.4


@dataclass(frozen=True)
class PdeState:
    x: np.ndarray
    gamma: np.ndarray
    v: np.ndarray
    t: float = 0.0

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])


def uniform_grid(L: float, nx: int) -> np.ndarray:
    if nx < 5 or not L > 0:
        raise OutOfDomain("grid", f"need nx >= 5 and L > 0, got nx={nx}, L={L}")
    return np.linspace(-L, L, nx)


class Boundary(Protocol):
    def extend(self, gamma: np.ndarray, v: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Return (gamma, v) padded with one ghost node per side."""

    def impose(self, gamma: np.ndarray, v: np.ndarray, t: float) -> None:
        """Overwrite constrained nodes in place."""


@dataclass(frozen=True)
class Dirichlet:
    """End-node values and ghost nodes taken from ``exact(x, t) -> (gamma, v)``."""

    x: np.ndarray
    exact: Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]]

    def _outer(self, t: float):
        dx = self.x[1] - self.x[0]
        xs = np.array([self.x[0] - dx, self.x[0], self.x[-1], self.x[-1] + dx])
        return self.exact(xs, t)

    def extend(self, gamma, v, t):
        g, w = self._outer(t)
        return (
            np.concatenate([[g[0]], gamma, [g[3]]]),
            np.concatenate([[w[0]], v, [w[3]]]),
        )

    def impose(self, gamma, v, t):
        g, w = self._outer(t)
        gamma[0], gamma[-1] = g[1], g[2]
        v[0], v[-1] = w[1], w[2]


@dataclass(frozen=True)
class Periodic:
    """Wrap-around; ``v_jump`` is added across the period (v = x has jump 2L + dx)."""

    v_jump: float = 0.0

    def extend(self, gamma, v, t):
        return (
            np.concatenate([[gamma[-1]], gamma, [gamma[0]]]),
            np.concatenate([[v[-1] - self.v_jump], v, [v[0] + self.v_jump]]),
        )

    def impose(self, gamma, v, t):
        return None


@dataclass(frozen=True)
class Rates:
    u: np.ndarray
    sigma: np.ndarray
    dgamma: np.ndarray
    dv: np.ndarray


def rates(params: ModelParams, gamma, v, t: float, dx: float, boundary: Boundary) -> Rates:
    """Right-hand side; ``dgamma`` is the same array as ``u`` used in ``sigma``.

    With Dirichlet data the end-node rates are zero (those nodes are imposed).
    """
    m, n = params.m, params.n
    _, ve = boundary.extend(gamma, v, t)
    u = (ve[2:] - ve[:-2]) / (2.0 * dx)
    with np.errstate(invalid="ignore"):  # u <= 0 is reported by the step check
        sigma = gamma ** (-m) * u**n
    if isinstance(boundary, Periodic):
        dv = (np.roll(sigma, -1) - np.roll(sigma, 1)) / (2.0 * dx)
    else:
        dv = np.zeros_like(sigma)
        dv[1:-1] = (sigma[2:] - sigma[:-2]) / (2.0 * dx)
    return Rates(u=u, sigma=sigma, dgamma=u, dv=dv)


def stable_dt(params: ModelParams, gamma, u, dx: float, cap: float) -> float:
    """0.4 dx^2 / max(nu), capped (nu vanishes when n = 0)."""
    n, m = params.n, params.m
    if n == 0.0:
        return cap
    nu = n * gamma ** (-m) * np.maximum(u, U_FLOOR) ** (n - 1.0)
    return min(cap, CFL * dx * dx / float(np.max(nu)))


def _check(gamma, u, t):
    if not np.all(gamma > 0):
        raise StabilityViolation(f"gamma <= 0 at t = {t:.6g}")
    if not np.all(u > U_FLOOR):
        raise StabilityViolation(f"u <= {U_FLOOR:g} at t = {t:.6g}")


def step(state: PdeState, params: ModelParams, dt: float, boundary: Boundary) -> PdeState:
    """One explicit midpoint step."""
    dx = state.dx
    t = state.t
    k1 = rates(params, state.gamma, state.v, t, dx, boundary)
    g_half = state.gamma + 0.5 * dt * k1.dgamma
    v_half = state.v + 0.5 * dt * k1.dv
    boundary.impose(g_half, v_half, t + 0.5 * dt)
    k2 = rates(params, g_half, v_half, t + 0.5 * dt, dx, boundary)
    gamma = state.gamma + dt * k2.dgamma
    v = state.v + dt * k2.dv
    boundary.impose(gamma, v, t + dt)
    ge, ve = boundary.extend(gamma, v, t + dt)
    _check(gamma, (ve[2:] - ve[:-2]) / (2.0 * dx), t + dt)
    return PdeState(x=state.x, gamma=gamma, v=v, t=t + dt)


def evolve(
    state: PdeState,
    params: ModelParams,
    T_final: float,
    boundary: Boundary,
    *,
    dt_cap: float | None = None,
    callback: Callable[[PdeState], None] | None = None,
) -> tuple[PdeState, int]:
    """Step to ``T_final`` exactly with the stability-limited step; returns (state, steps)."""
    dx = state.dx
    cap = dt_cap if dt_cap is not None else dx
    steps = 0
    while state.t < T_final:
        u = rates(params, state.gamma, state.v, state.t, dx, boundary).u
        dt = stable_dt(params, state.gamma, u, dx, cap)
        dt = min(dt, T_final - state.t)
        state = step(state, params, dt, boundary)
        if T_final - state.t < 1e-14 * max(1.0, T_final):
            state = replace(state, t=T_final)
        steps += 1
        if callback is not None:
            callback(state)
    return state, steps


@dataclass(frozen=True)
class CrossValidation:
    L: float
    nx: int
    T_final: float
    steps: int
    err_gamma: float
    err_v: float
    err_u: float
    seconds: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _rel_max(num, ref) -> float:
    return float(np.max(np.abs(num - ref)) / np.max(np.abs(ref)))


def _schedule(T_final: float, dt: float, stops) -> np.ndarray:
    """Step end times: equal steps <= dt between consecutive stops."""
    times = [np.zeros(1)]
    prev = 0.0
    for stop in list(stops) + [T_final]:
        if stop <= prev:
            continue
        k = max(1, math.ceil((stop - prev) / dt * (1.0 - 1e-12)))
        seg = prev + (stop - prev) * np.arange(1, k + 1) / k
        seg[-1] = stop
        times.append(seg)
        prev = stop
    return np.concatenate(times)


class _HalfLine:
    """Midpoint stepping on [0, L] for even gamma / odd v.

    Node 0 is x = 0 with mirror ghosts gamma_-1 = gamma_1, v_-1 = -v_1; node M
    is x = L with Dirichlet data and a ghost of v from ``edge`` values. This is
    the full-line scheme restricted to its invariant symmetric subspace.
    """

    def __init__(self, params: ModelParams, x: np.ndarray):
        self.m, self.n = params.m, params.n
        self.inv2dx = 1.0 / (2.0 * (x[1] - x[0]))
        size = x.size
        self.u = np.empty(size)
        self.lg = np.empty(size)
        self.sigma = np.empty(size)
        self.dv = np.zeros(size)

    def stage(self, g, v, v_ghost):
        u, lg, s, dv, h = self.u, self.lg, self.sigma, self.dv, self.inv2dx
        np.subtract(v[2:], v[:-2], out=u[1:-1])
        u[0] = v[1] - (-v[1])
        u[-1] = v_ghost - v[-2]
        u *= h
        np.log(u, out=s)
        s *= self.n
        np.log(g, out=lg)
        lg *= self.m
        s -= lg
        np.exp(s, out=s)
        dv[0] = 0.0  # sigma is even, so its centered difference vanishes at x = 0
        np.subtract(s[2:], s[:-2], out=dv[1:-1])
        dv[1:-1] *= h
        return u, dv


def _exact_pair(profile, xs, t):
    from .profiles import self_similar_field

    f = self_similar_field(profile, xs, t)
    return f["gamma"], f["v"]


def max_diffusivity(profile, x, T_final: float, samples: int = 65) -> float:
    """Largest n gamma^-m u^(n-1) of the exact solution on the grid over [0, T_final]."""
    from .profiles import self_similar_field

    n, m = profile.params.n, profile.params.m
    worst = 0.0
    for t in np.linspace(0.0, T_final, samples):
        f = self_similar_field(profile, x, t)
        worst = max(worst, float(np.max(n * f["gamma"] ** (-m) * f["u"] ** (n - 1.0))))
    return worst


def run_cross_validation(
    profile,
    T_final: float,
    *,
    L: float = 2.0,
    nx: int = 2001,
    snapshots=(),
    on_snapshot=None,
) -> CrossValidation:
    """Evolve the self-similar initial data and compare with the exact fields at T_final.

    Dirichlet values at x = +-L (and the ghost of v beyond) come from the exact
    fields. The step is fixed at 0.4 dx^2 / max(nu) with nu maximized over the
    exact solution on the grid and the time interval, so boundary data for all
    stages are evaluated up front; the numerical nu is re-checked as it runs.
    Even/odd symmetry is used to evolve x >= 0 only (nx must be odd).
    ``on_snapshot(state, rates)`` receives full-line states at the snapshot times.
    """
    if nx % 2 == 0:
        raise OutOfDomain("nx-odd", f"nx must be odd so that x = 0 is a node, got {nx}")
    params = profile.params
    x = uniform_grid(L, nx)
    half = x[nx // 2:].copy()
    half[0] = 0.0
    dx = float(half[1] - half[0])
    g0, v0 = _exact_pair(profile, half, 0.0)
    g, v = np.array(g0), np.array(v0)
    v[0] = 0.0

    start = _time.perf_counter()
    nu_max = max_diffusivity(profile, half, T_final) if T_final > 0 else 1.0
    dt = CFL * dx * dx / nu_max
    stops = sorted(float(s) for s in snapshots if 0.0 < s < T_final)
    times = _schedule(T_final, dt, stops) if T_final > 0 else np.zeros(1)
    mids = 0.5 * (times[1:] + times[:-1])
    edge = np.array([half[-1], half[-1] + dx])
    stage_t = np.concatenate([times, mids])
    eg, ev = _exact_pair(profile, edge[None, :], stage_t[:, None])
    nt = times.size
    g_edge, v_edge, v_ghost = eg[:, 0], ev[:, 0], ev[:, 1]

    solver = _HalfLine(params, half)
    gh, vh = np.empty_like(g), np.empty_like(v)
    want = {s: None for s in stops}
    check_every = 64
    for k in range(nt - 1):
        dtk = times[k + 1] - times[k]
        u1, dv1 = solver.stage(g, v, v_ghost[k])
        if not (g.min() > 0.0 and u1.min() > U_FLOOR):
            raise StabilityViolation(f"gamma <= 0 or u <= {U_FLOOR:g} at t = {times[k]:.6g}")
        if k % check_every == 0:
            nu = float(np.max(params.n * solver.sigma / u1))
            if nu * dtk > 2.0 * dx * dx:
                raise StabilityViolation(
                    f"diffusivity {nu:.3g} at t = {times[k]:.6g} exceeds the step bound"
                )
        np.multiply(u1, 0.5 * dtk, out=gh)
        gh += g
        np.multiply(dv1, 0.5 * dtk, out=vh)
        vh += v
        gh[-1], vh[-1] = g_edge[nt + k], v_edge[nt + k]
        u2, dv2 = solver.stage(gh, vh, v_ghost[nt + k])
        g += dtk * u2
        v += dtk * dv2
        g[-1], v[-1] = g_edge[k + 1], v_edge[k + 1]
        t_next = times[k + 1]
        if on_snapshot is not None and t_next in want:
            state = _full_line(x, g, v, t_next)
            full_bnd = Dirichlet(x=x, exact=lambda xs, t: _exact_pair(profile, xs, t))
            on_snapshot(state, rates(params, state.gamma, state.v, t_next, dx, full_bnd))
    u_end, _ = solver.stage(g, v, v_ghost[nt - 1])
    if not (g.min() > 0.0 and u_end.min() > U_FLOOR):
        raise StabilityViolation(f"gamma <= 0 or u <= {U_FLOOR:g} at t = {T_final:.6g}")

    from .profiles import self_similar_field

    ref = self_similar_field(profile, half, T_final)
    return CrossValidation(
        L=L, nx=nx, T_final=T_final, steps=nt - 1,
        err_gamma=_rel_max(g, ref["gamma"]),
        err_v=_rel_max(v, ref["v"]),
        err_u=_rel_max(u_end, ref["u"]),
        seconds=_time.perf_counter() - start,
    )


def _full_line(x: np.ndarray, g_half: np.ndarray, v_half: np.ndarray, t: float) -> PdeState:
    gamma = np.concatenate([g_half[:0:-1], g_half])
    v = np.concatenate([-v_half[:0:-1], v_half])
    return PdeState(x=x, gamma=gamma, v=v, t=t)


def uniform_shear_baseline(
    params: ModelParams, gamma0: float, T_final: float = 1.0, *, L: float = 1.0, nx: int = 257
) -> float:
    """Max deviation from v = x, gamma = gamma0 + t over the grid and all steps.

    Periodic wrap-around with the jump of v = x keeps every node identical.
    The default grid has dx = 1/128, so v = x is represented exactly and u = 1
    holds to the bit; otherwise rounding noise seeds the shear instability
    (catastrophically so at n = 0).
    """
    if not gamma0 > 0:
        raise OutOfDomain("gamma0", f"gamma0 must be positive, got {gamma0}")
    x = uniform_grid(L, nx)
    state = PdeState(x=x, gamma=np.full_like(x, gamma0), v=x.copy())

    worst = [0.0]

    def track(s: PdeState):
        dev = max(np.max(np.abs(s.gamma - (gamma0 + s.t))), np.max(np.abs(s.v - s.x)))
        worst[0] = max(worst[0], float(dev))

    dx = x[1] - x[0]
    evolve(state, params, T_final, Periodic(v_jump=2.0 * L + dx), dt_cap=min(1e-2, T_final), callback=track)
    return worst[0]
