"""The autonomous (p, q, r) system in slow and fast time, and its equilibria.

Slow time (eta = log xi)::

    p' = p * ((r - k0)/lam - k1 + 1 - q - lam*p*r)
    q' = q * (1 - q - lam*p*r) + b*p*r
    n r' = r * ((m - n)/lam * (r - k0) + k1 - 1 + q + lam*p*r)

with s = 1 + m - n, k0 = (2 - n)/s, k1 = (1 - m + n)/s. The fast system is the
same field with the first two lines multiplied by n (time eta/n). The third
right-hand side is ``f(p, q, r)``.

All field functions accept scalars or broadcastable arrays, real or complex
(complex inputs are used for complex-step derivatives elsewhere).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .errors import EigenMismatch, NZero
from .params import (
    E_ZERO_TOL,
    ModelParams,
    derive_constants,
    is_double_eigenvalue_case,
)

log = logging.getLogger(__name__)

Scale = Literal["slow", "fast"]


class PhasePoint(NamedTuple):
    p: float
    q: float
    r: float


def _coefficients(params: ModelParams) -> tuple[float, float, float]:
    lam, m, n = params.lam, params.m, params.n
    s = 1.0 + m - n
    k0 = (2.0 - n) / s
    k1 = (1.0 - m + n) / s
    b = (1.0 - m) / s + k1 * lam
    return k0, k1, b


def p_rate(params: ModelParams, p, q, r):
    """First slow-field component (shared by the 3D and reduced systems)."""
    k0, k1, _ = _coefficients(params)
    lam = params.lam
    return p * ((r - k0) / lam - k1 + 1.0 - q - lam * p * r)


def q_rate(params: ModelParams, p, q, r):
    _, _, b = _coefficients(params)
    lam = params.lam
    return q * (1.0 - q - lam * p * r) + b * p * r


def fast_r_rate(params: ModelParams, p, q, r):
    """The function f(p, q, r): r-component of the fast field."""
    k0, k1, _ = _coefficients(params)
    lam, m, n = params.lam, params.m, params.n
    return r * ((m - n) / lam * (r - k0) + k1 - 1.0 + q + lam * p * r)


def slow_field(params: ModelParams, pt: Sequence) -> np.ndarray:
    if params.n == 0.0:
        raise NZero("slow_field")
    p, q, r = pt
    return np.array(
        [p_rate(params, p, q, r), q_rate(params, p, q, r), fast_r_rate(params, p, q, r) / params.n]
    )


def fast_field(params: ModelParams, pt: Sequence) -> np.ndarray:
    p, q, r = pt
    n = params.n
    return np.array(
        [n * p_rate(params, p, q, r), n * q_rate(params, p, q, r), fast_r_rate(params, p, q, r)]
    )


def slow_field_about(params: ModelParams, center: Sequence, w: Sequence) -> np.ndarray:
    """Slow field at ``center + w`` for an equilibrium ``center``, without forming the sum.

    Products are expanded around the center and the bracket that vanishes there
    is dropped, so the result keeps full relative accuracy as ``|w| -> 0``.
    """
    if params.n == 0.0:
        raise NZero("slow_field_about")
    k0, k1, b = _coefficients(params)
    lam, m, n = params.lam, params.m, params.n
    P, Q, R = (float(x) for x in center)
    w0, w1, w2 = w
    d_pr = P * w2 + w0 * R + w0 * w2  # (P + w0)(R + w2) - P R
    g1 = (0.0 if P else (R - k0) / lam - k1 + 1.0 - Q - lam * P * R) + w2 / lam - w1 - lam * d_pr
    g3 = (0.0 if R else (m - n) / lam * (R - k0) + k1 - 1.0 + Q + lam * P * R) + (m - n) / lam * w2 + w1 + lam * d_pr
    h = 1.0 - Q - lam * P * R
    return np.array(
        [
            (P + w0) * g1,
            (Q + w1) * (h - w1 - lam * d_pr) + b * d_pr,
            (R + w2) * g3 / n,
        ]
    )


def jacobian(params: ModelParams, pt: Sequence, scale: Scale = "slow") -> np.ndarray:
    """Analytic Jacobian of the slow or fast field at ``pt``."""
    if scale not in ("slow", "fast"):
        raise ValueError(f"scale must be 'slow' or 'fast', got {scale!r}")
    n = params.n
    if scale == "slow" and n == 0.0:
        raise NZero("slow-scale jacobian")
    k0, k1, b = _coefficients(params)
    lam, m = params.lam, params.m
    p, q, r = (float(x) for x in pt)

    g1 = (r - k0) / lam - k1 + 1.0 - q - lam * p * r
    g3 = (m - n) / lam * (r - k0) + k1 - 1.0 + q + lam * p * r
    J = np.array(
        [
            [g1 - lam * p * r, -p, p * (1.0 / lam - lam * p)],
            [(b - lam * q) * r, 1.0 - 2.0 * q - lam * p * r, (b - lam * q) * p],
            [lam * r * r, r, g3 + r * ((m - n) / lam + lam * p)],
        ]
    )
    if scale == "slow":
        J[2] /= n
    else:
        J[:2] *= n
    return J


Classification = Literal["unstable-node", "saddle", "stable-node", "saddle-origin"]


@dataclass(frozen=True)
class EquilibriumInfo:
    """Equilibrium with its slow-scale eigenstructure.

    When ``degenerate`` is set (M1 with m - n = 1/2 and e != 0), the second
    vector is a generalized eigenvector X' with (J - mu I) X' = X_first.
    """

    label: str
    location: PhasePoint
    eigenvalues: tuple[float, float, float]
    eigenvectors: np.ndarray  # rows are vectors
    classification: Classification
    degenerate: bool = False
    raw_eigenvectors: np.ndarray = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "location": [float(x) for x in self.location],
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "eigenvectors": [[float(x) for x in v] for v in self.eigenvectors],
            "classification": self.classification,
            "degenerate_flag": self.degenerate,
        }


def normalize_direction(v: np.ndarray) -> np.ndarray:
    """Unit length, sign fixed so the largest-magnitude entry is positive."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def unstable_node_vectors(params: ModelParams) -> np.ndarray:
    """Unnormalized X01, X02, X03 at M0 (p-component of X02 equals 1)."""
    k = derive_constants(params)
    lam, m, n = params.lam, params.m, params.n
    return np.array(
        [
            [0.0, 1.0, -lam / (m - n) / (1.0 - 1.0 / k.A)],
            [1.0, k.a * k.b, -lam * k.a * k.d / (m - n) / (1.0 - 2.0 / k.A)],
            [0.0, 0.0, 1.0],
        ]
    )


def saddle_vectors(params: ModelParams) -> tuple[np.ndarray, bool]:
    """Unnormalized X11, X12 (or generalized X12'), X13 at M1 and the degeneracy flag."""
    k = derive_constants(params)
    lam, m, n = params.lam, params.m, params.n
    c, e, B, C = k.c, k.e, k.B, k.C
    x11 = np.array([0.0, 1.0, -lam / (m - n) / (1.0 + 1.0 / B)])
    x13 = np.array([0.0, 0.0, 1.0])
    mu12 = -(1.0 - m + n) / (m - n)
    if abs(e) <= E_ZERO_TOL:
        x12 = np.array([1.0, 0.0, -lam / (m - n) * lam * c / (1.0 + 1.0 / C)])
        return np.array([x11, x12, x13]), False
    if is_double_eigenvalue_case(params):
        x12g = np.array([1.0, -lam * c - 2.0 * lam * n * e / (1.0 + 1.0 / B), 0.0])
        return np.array([x11, x12g, x13]), True
    x12 = np.array(
        [
            (mu12 + 1.0) / (e * c),
            1.0,
            -lam / (m - n) * ((mu12 + 1.0) * lam + e) / (e * (1.0 + 1.0 / C)),
        ]
    )
    return np.array([x11, x12, x13]), False


def spectral_gap_margin(params: ModelParams) -> float:
    """1 - 2/A; must be positive for the M0 eigenvector formulas to hold."""
    A = derive_constants(params).A
    return 1.0 - 2.0 / A


def equilibria(params: ModelParams, *, check: bool = True) -> list[EquilibriumInfo]:
    if params.n == 0.0:
        raise NZero("equilibria")
    k = derive_constants(params)
    lam, m, n = params.lam, params.m, params.n
    gap = spectral_gap_margin(params)
    if gap <= 0.0:
        log.warning("1 - 2/A = %.3g <= 0: n is too large for the M0 eigenvector formulas", gap)

    eye = np.eye(3)
    x1, degenerate = saddle_vectors(params)
    mu12 = -(1.0 - m + n) / (m - n)
    specs = [
        ("M0", (0.0, 0.0, k.a), (1.0, 2.0, k.A), unstable_node_vectors(params), "unstable-node"),
        ("M1", (0.0, 1.0, k.c), (-1.0, mu12, k.B), x1, "saddle"),
        ("M2", (0.0, 1.0, 0.0), (-k.g / lam, -1.0, -k.B), eye, "stable-node"),
        ("M3", (0.0, 0.0, 0.0), (-k.h / lam, 1.0, -k.A), eye, "saddle-origin"),
    ]
    out = []
    for label, loc, mus, raw, cls in specs:
        is_deg = degenerate and label == "M1"
        vecs = np.array([normalize_direction(v) for v in raw])
        if is_deg:
            # keep the Jordan chain relation (J + I) X' = X11 with the unit X11
            Jm = jacobian(params, loc) - mus[0] * eye
            w = Jm @ raw[1]
            vecs[1] = raw[1] / np.dot(w, vecs[0])
        info = EquilibriumInfo(
            label=label,
            location=PhasePoint(*loc),
            eigenvalues=tuple(float(x) for x in mus),
            eigenvectors=vecs,
            classification=cls,
            degenerate=is_deg,
            raw_eigenvectors=np.asarray(raw, dtype=float),
        )
        if check:
            verify_equilibrium(params, info)
        out.append(info)
    return out


def verify_equilibrium(params: ModelParams, info: EquilibriumInfo, rel_tol: float = 1e-9) -> None:
    """Re-check closed-form eigenpairs against the analytic Jacobian."""
    J = jacobian(params, info.location)
    scale = np.linalg.norm(J)
    for j, (mu, v) in enumerate(zip(info.eigenvalues, info.eigenvectors)):
        if info.degenerate and j == 1:
            res = (J - mu * np.eye(3)) @ v - info.eigenvectors[0]
        else:
            res = J @ v - mu * v
        if np.linalg.norm(res) > rel_tol * scale:
            raise EigenMismatch(
                f"{info.label}: eigenpair {j + 1} residual {np.linalg.norm(res):.3e} "
                f"exceeds {rel_tol:.1e}*|J|={rel_tol * scale:.3e}"
            )
    numeric = np.linalg.eigvals(J)
    if np.max(np.abs(numeric.imag)) > rel_tol * scale:
        raise EigenMismatch(f"{info.label}: complex eigenvalues {numeric}")
    numeric = np.sort(numeric.real)
    closed = np.sort(np.array(info.eigenvalues))
    # a defective double eigenvalue is only resolved to ~sqrt(eps) by a dense solver
    tol = 1e-6 if info.degenerate else rel_tol
    if np.any(np.abs(numeric - closed) > tol * np.maximum(1.0, np.abs(closed))):
        raise EigenMismatch(f"{info.label}: closed form {closed} vs numeric {numeric}")


def equilibrium(params: ModelParams, label: str) -> EquilibriumInfo:
    for info in equilibria(params, check=False):
        if info.label == label:
            return info
    raise KeyError(label)
