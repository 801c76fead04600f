"""Admissible parameter domain and the closed-form constants built from (lambda, m, n)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import OutOfDomain, RatioOutOfRange

# Sub-case switches at M1: m - n = 1/2 (double eigenvalue) and e = 0.
DEGENERATE_MN_TOL = 1e-9
E_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    lam: float
    m: float
    n: float


@dataclass(frozen=True)
class ValidatedParams(ModelParams):
    """Parameters certified to lie in the admissible domain.

    ``critical_only`` is set for n = 0: only the critical-manifold code may use them.
    """

    critical_only: bool = False

    def with_n(self, n: float) -> "ValidatedParams":
        return validate_params(ModelParams(self.lam, self.m, n))


def lambda_upper_bound(m: float, n: float) -> float:
    """Largest focusing rate keeping c > 0 (unbounded when 1 - m + n = 0)."""
    den = 1.0 - m + n
    return math.inf if den == 0.0 else (2.0 - n) * (m - n) / den


def validate_params(raw: ModelParams) -> ValidatedParams:
    lam, m, n = float(raw.lam), float(raw.m), float(raw.n)
    if not all(math.isfinite(x) for x in (lam, m, n)):
        raise OutOfDomain("finite", f"non-finite parameter in {(lam, m, n)}")
    if not 0.0 < m <= 1.0:
        raise OutOfDomain("m-range", f"need 0 < m <= 1, got m={m}")
    if n < 0.0:
        raise OutOfDomain("n-nonnegative", f"need n >= 0, got n={n}")
    if not n < m:
        raise OutOfDomain("n<m", f"need n < m (unstable regime), got m={m}, n={n}")
    if not lam > 0.0:
        raise OutOfDomain("lambda-positive", f"need lambda > 0, got {lam}")
    bound = lambda_upper_bound(m, n)
    if not lam < bound:
        raise OutOfDomain(
            "lambda-upper-bound",
            f"need lambda < (2-n)(m-n)/(1-m+n) = {bound:.10g}, got {lam}",
        )
    return ValidatedParams(lam, m, n, critical_only=(n == 0.0))


def lambda_margin(p: ModelParams) -> float:
    """Distance of lambda below its upper bound (reported, never enforced beyond > 0)."""
    return lambda_upper_bound(p.m, p.n) - p.lam


@dataclass(frozen=True)
class DerivedConstants:
    a: float
    b: float
    alpha: float
    beta: float
    c: float
    d: float
    e: float
    f: float
    g: float
    h: float
    A: float
    B: float
    C: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def derive_constants(p: ModelParams) -> DerivedConstants:
    """Evaluate the thirteen constants. A, B, C are +inf when n = 0."""
    lam, m, n = p.lam, p.m, p.n
    s = 1.0 + m - n
    k0 = (2.0 - n) / s
    k1 = (1.0 - m + n) / s
    a = k0 + 2.0 * lam / s
    b = (1.0 - m) / s + k1 * lam
    c = k0 - (1.0 - m + n) * lam / (s * (m - n))
    d = (1.0 - m) / s + 2.0 * lam / s
    e = (1.0 - m) / s - 2.0 * (m - n) * lam / s
    f = (1.0 - m) / s - (1.0 - m + n) * lam / (s * (m - n))
    g = k0 + k1 * lam
    h = k0 - 2.0 * (m - n) * lam / s
    if n > 0.0:
        A = (m - n) / n * a / lam
        B = (m - n) / n * c / lam
        C = (m - n) / (1.0 - m + n) * B
    else:
        A = B = C = math.inf
    return DerivedConstants(
        a=a, b=b, alpha=-2.0 / s, beta=-k1, c=c, d=d, e=e, f=f, g=g, h=h, A=A, B=B, C=C
    )


def admissible_ratio_interval(m: float, n: float) -> tuple[float, float]:
    """Open interval of U0/Gamma0 for which 0 < lambda < upper bound."""
    return (2.0 - n) / (1.0 + m - n), (2.0 - n) / (1.0 - m + n)


def lambda_from_initial_data(Gamma0: float, U0: float, m: float, n: float) -> float:
    if not (Gamma0 > 0.0 and U0 > 0.0):
        raise OutOfDomain("initial-data", f"need Gamma0, U0 > 0, got {Gamma0}, {U0}")
    lo, hi = admissible_ratio_interval(m, n)
    ratio = U0 / Gamma0
    if not lo < ratio < hi:
        raise RatioOutOfRange(ratio, lo, hi)
    return 0.5 * (1.0 + m - n) * (ratio - lo)


def is_double_eigenvalue_case(p: ModelParams) -> bool:
    return abs(p.m - p.n - 0.5) <= DEGENERATE_MN_TOL


def is_log_corrected_case(p: ModelParams) -> bool:
    """m - n = 1/2 with lambda != 1 - m: tails carry logarithmic corrections."""
    return is_double_eigenvalue_case(p) and abs(derive_constants(p).e) > E_ZERO_TOL
