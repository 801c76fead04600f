"""Similarity profiles (Gamma, V, Sigma, U) reconstructed from a heteroclinic orbit,
and the focusing space-time fields they generate.

With xi = exp(eta - eta0) along the orbit::

    Gamma = xi**alpha * g~,  V = xi**beta * v~,  Sigma = xi**(-alpha (m-n)) * s~,  U = xi**alpha * u~

where, with s = 1 + m - n,
g~ = (p r^n)^(1/s), v~ = (p^-(m-n) q^s r^n)^(1/s) / b, s~ = (p^-(m-n) r^n)^(1/s), u~ = (p r^(1+m))^(1/s).
The fields are gamma = (1+t)^a Gamma(x (1+t)^lam) and similarly for v, sigma, u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .errors import DegenerateCase, NonpositiveInput, OutOfGrid
from .heteroclinic import (
    Controls,
    Orbit,
    OrbitAsymptotics,
    asymptotics,
    compute_shift,
    refine_orbit,
    shoot_heteroclinic,
)
from .params import ValidatedParams, derive_constants, is_log_corrected_case

FIELDS = ("Gamma", "V", "Sigma", "U")


def reconstruct_tilde(pt, params) -> tuple:
    """(g~, v~, s~, u~) from (p, q, r); works elementwise on arrays."""
    p, q, r = (np.asarray(x, dtype=float) for x in pt)
    if np.any(p <= 0) or np.any(q <= 0) or np.any(r <= 0):
        raise NonpositiveInput("reconstruction needs p, q, r > 0")
    m, n = params.m, params.n
    s = 1.0 + m - n
    b = derive_constants(params).b
    gamma_t = (p * r**n) ** (1.0 / s)
    sigma_t = (p ** (-(m - n)) * r**n) ** (1.0 / s)
    v_t = (p ** (-(m - n)) * q**s * r**n) ** (1.0 / s) / b
    u_t = (p * r ** (1.0 + m)) ** (1.0 / s)
    return gamma_t, v_t, sigma_t, u_t


def ratios(gamma_t, v_t, sigma_t, u_t, params) -> tuple:
    """Inverse map: p = g~/s~, q = b v~/s~, r = u~/g~."""
    b = derive_constants(params).b
    return gamma_t / sigma_t, b * v_t / sigma_t, u_t / gamma_t


@dataclass(frozen=True)
class SimilarityProfile:
    """Profiles on ``xi`` (xi[0] = 0 carries the analytic limits, xi[1:] > 0 increasing)."""

    xi: np.ndarray
    Gamma: np.ndarray
    V: np.ndarray
    Sigma: np.ndarray
    U: np.ndarray
    params: ValidatedParams
    Gamma0: float
    U0: float
    _interp: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        logx = np.log(self.xi[1:])
        table = {
            name: PchipInterpolator(logx, np.log(getattr(self, name)[1:]), extrapolate=False)
            for name in FIELDS
        }
        object.__setattr__(self, "_interp", table)

    @property
    def xi_max(self) -> float:
        return float(self.xi[-1])

    def evaluate(self, xi) -> dict[str, np.ndarray]:
        """Profiles at xi >= 0.

        Below the first positive grid point the even fields use
        F(0) + (F(xi1) - F(0)) (xi/xi1)^2 and V uses U0 xi + c xi^3, matching the
        analytic expansions at the origin.
        """
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < 0) or np.any(xi > self.xi_max) or np.any(~np.isfinite(xi)):
            raise OutOfGrid(f"xi must lie in [0, {self.xi_max:.6g}]")
        xi1 = self.xi[1]
        inner = xi < xi1
        out = {}
        with np.errstate(divide="ignore"):
            logx = np.log(np.where(inner, xi1, xi))
        for name in FIELDS:
            vals = np.exp(self._interp[name](logx))
            f0, f1 = getattr(self, name)[0], getattr(self, name)[1]
            w = xi / xi1
            if name == "V":
                near = self.U0 * xi + (f1 - self.U0 * xi1) * w**3
            else:
                near = f0 + (f1 - f0) * w**2
            out[name] = np.where(inner, near, vals)
        return out


def orbit_to_profile(
    orbit: Orbit, eta0: float, Gamma0: float, U0: float, params: ValidatedParams
) -> SimilarityProfile:
    """Profiles along the orbit with xi = exp(eta - eta0), plus the xi = 0 limits."""
    k = derive_constants(params)
    m, n = params.m, params.n
    keep = np.all(orbit.points > 0, axis=0)
    eta = orbit.eta[keep]
    g, v, s, u = reconstruct_tilde(orbit.points[:, keep], params)
    logxi = eta - eta0
    xi = np.exp(logxi)
    Gamma = np.exp(k.alpha * logxi) * g
    V = np.exp(k.beta * logxi) * v
    Sigma = np.exp(-k.alpha * (m - n) * logxi) * s
    U = np.exp(k.alpha * logxi) * u
    head = (Gamma0, 0.0, Gamma0 ** (-m) * U0**n, U0)
    arrays = [np.concatenate([[h], arr]) for h, arr in zip(head, (Gamma, V, Sigma, U))]
    return SimilarityProfile(
        np.concatenate([[0.0], xi]), *arrays, params=params, Gamma0=float(Gamma0), U0=float(U0)
    )


def build_profile(
    params: ValidatedParams,
    Gamma0: float = 1.0,
    U0: float | None = None,
    *,
    refine: bool = True,
    epsilon: float = 1e-6,
    controls: Controls = Controls(),
) -> tuple[SimilarityProfile, Orbit, OrbitAsymptotics]:
    """Shoot the heteroclinic, optionally refine it in 3D, and map it to profiles.

    U0 defaults to a * Gamma0, the only value compatible with ``params.lam``;
    any other value raises InconsistentLambda.
    """
    if U0 is None:
        U0 = derive_constants(params).a * Gamma0
    orbit, asym = shoot_heteroclinic(params, epsilon, controls, Gamma0=Gamma0)
    if refine:
        orbit, _ = refine_orbit(orbit)
        asym = asymptotics(orbit, params, Gamma0)
    eta0 = compute_shift(Gamma0, U0, params, asym.kappa2_bar)
    return orbit_to_profile(orbit, eta0, Gamma0, U0, params), orbit, asym


def velocity_by_quadrature(profile: SimilarityProfile) -> np.ndarray:
    """V(xi) = integral of U from 0, an independent check on the reconstructed V."""
    return cumulative_trapezoid(profile.U, profile.xi, initial=0.0)


def ode_residual(profile: SimilarityProfile) -> dict[str, np.ndarray]:
    """Relative residuals of a Gamma + lam xi Gamma' = U and b V + lam xi V' = Sigma'.

    Derivatives are second-order differences in log xi on the positive grid,
    so this is meaningful for uniformly resampled orbits.
    """
    k = derive_constants(profile.params)
    lam = profile.params.lam
    logx = np.log(profile.xi[1:])
    G, V, S, U = (getattr(profile, f)[1:] for f in FIELDS)
    dG = np.gradient(G, logx)
    dV = np.gradient(V, logx)
    dS = np.gradient(S, logx)
    xi = profile.xi[1:]
    first = (k.a * G + lam * dG - U) / U
    second = (k.b * V * xi + lam * xi * dV - dS) / np.maximum(np.abs(dS), np.abs(k.b * V * xi))
    return {"strain": first[1:-1], "momentum": second[1:-1]}


@dataclass(frozen=True)
class TailFit:
    Gamma: float
    U: float
    Sigma: float
    V: float
    V_inf: float
    window: tuple[float, float]
    degenerate: bool


def expected_tail_slopes(params) -> dict[str, float]:
    mn = params.m - params.n
    return {"Gamma": -1.0 / mn, "U": -1.0 / mn, "Sigma": 1.0, "V": 0.0}


def tail_exponents(profile: SimilarityProfile, *, decades: float = 1.0, strict: bool = True) -> TailFit:
    """Log-log slopes over the last ``decades`` of the grid.

    In the log-corrected regime the slopes carry log(xi) corrections; with
    ``strict`` this raises DegenerateCase, otherwise the fit is returned flagged.
    """
    degenerate = is_log_corrected_case(profile.params)
    if degenerate and strict:
        raise DegenerateCase("m - n = 1/2 with lambda != 1 - m: tails are log-corrected")
    xi = profile.xi[1:]
    if math.log10(xi[-1] / xi[0]) < 3.0:
        raise OutOfGrid("tail fit needs the grid to span at least 3 decades")
    lo = xi[-1] / 10.0**decades
    sel = xi >= lo
    lx = np.log(xi[sel])
    slopes = {
        name: float(np.polyfit(lx, np.log(getattr(profile, name)[1:][sel]), 1)[0]) for name in FIELDS
    }
    return TailFit(
        **slopes, V_inf=float(profile.V[-1]), window=(float(lo), float(xi[-1])), degenerate=degenerate
    )


def field_exponents(params) -> dict[str, float]:
    """Time exponents of the prefactors: gamma ~ (1+t)^a etc."""
    k = derive_constants(params)
    m, n, lam = params.m, params.n, params.lam
    s = 1.0 + m - n
    return {
        "gamma": k.a,
        "v": k.b,
        "sigma": -(2.0 * m - n) / s - 2.0 * (m - n) * lam / s,
        "u": (1.0 - m) / s + 2.0 * lam / s,
    }


def self_similar_field(profile: SimilarityProfile, x, t) -> dict[str, np.ndarray]:
    """(gamma, v, sigma, u) at (x, t), broadcasting x against t.

    Gamma, Sigma, U are extended evenly and V oddly to x < 0.
    """
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise OutOfGrid("t must be nonnegative")
    lam = profile.params.lam
    e = field_exponents(profile.params)
    tau = 1.0 + t
    vals = profile.evaluate(np.abs(x) * tau**lam)
    return {
        "gamma": tau ** e["gamma"] * vals["Gamma"],
        "v": np.sign(x) * tau ** e["v"] * vals["V"],
        "sigma": tau ** e["sigma"] * vals["Sigma"],
        "u": tau ** e["u"] * vals["U"],
    }


def off_origin_strain_exponent(params) -> float:
    """Late-time exponent of gamma at fixed x != 0."""
    mn = params.m - params.n
    s = 1.0 + mn
    return (2.0 - params.n) / s - (1.0 - mn) * params.lam / (s * mn)


def growth_rate_report(profile: SimilarityProfile, x_list, t_span=(1e6, 1e10), num: int = 41) -> list[dict]:
    """Measured d log(field)/d log(1+t) at late times versus the closed forms.

    Strain and strain rate are reported at each x; off the origin the expected
    exponents follow from the tail Gamma ~ xi^(-1/(m-n)).
    """
    prm = profile.params
    e = field_exponents(prm)
    off = off_origin_strain_exponent(prm)
    tau = np.geomspace(1.0 + t_span[0], 1.0 + t_span[1], num)
    out = []
    for x in x_list:
        vals = self_similar_field(profile, np.full_like(tau, float(x)), tau - 1.0)
        lt = np.log(tau)
        row = {"x": float(x)}
        for name, key in (("strain", "gamma"), ("strain_rate", "u")):
            measured = float(np.polyfit(lt, np.log(vals[key]), 1)[0])
            if x == 0:
                expected = e[key]
            else:
                expected = off if key == "gamma" else off - 1.0
            row[name] = {"measured": measured, "expected": expected}
        if x == 0:
            measured = float(np.polyfit(lt, np.log(vals["sigma"]), 1)[0])
            row["stress"] = {"measured": measured, "expected": e["sigma"]}
        out.append(row)
    return out
