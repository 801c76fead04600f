from __future__ import annotations

import math

import mpmath as mp
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shearband.errors import OutOfDomain, RatioOutOfRange
from shearband.params import (
    ModelParams,
    admissible_ratio_interval,
    derive_constants,
    is_double_eigenvalue_case,
    is_log_corrected_case,
    lambda_from_initial_data,
    lambda_margin,
    lambda_upper_bound,
    validate_params,
)

mp.mp.dps = 40


def mp_constants(lam, m, n):
    """High-precision evaluation of the closed forms, written out independently."""
    lam, m, n = mp.mpf(lam), mp.mpf(m), mp.mpf(n)
    s = 1 + m - n
    out = {
        "a": (2 - n + 2 * lam) / s,
        "b": ((1 - m) + (1 - m + n) * lam) / s,
        "c": (2 - n) / s - (1 - m + n) * lam / (s * (m - n)),
        "h": (2 - n) / s - 2 * (m - n) * lam / s,
        "g": (2 - n) / s + (1 - m + n) * lam / s,
        "d": (1 - m + 2 * lam) / s,
    }
    out["A"] = (m - n) / n * out["a"] / lam
    out["B"] = (m - n) / n * out["c"] / lam
    return out


@st.composite
def admissible(draw, n_zero: bool = False):
    m = draw(st.floats(0.05, 1.0))
    n = 0.0 if n_zero else draw(st.floats(1e-3, 0.95)) * m
    bound = min(lambda_upper_bound(m, n), 50.0)
    lam = draw(st.floats(0.01, 0.99)) * bound
    return validate_params(ModelParams(lam, m, n))


def test_reference_tuple_is_valid_with_bound_585():
    p = validate_params(ModelParams(1.0, 0.8, 0.05))
    assert not p.critical_only
    oracle = (2 - mp.mpf("0.05")) * (mp.mpf("0.8") - mp.mpf("0.05")) / (1 - mp.mpf("0.8") + mp.mpf("0.05"))
    assert lambda_upper_bound(0.8, 0.05) == pytest.approx(float(oracle), rel=1e-15)
    assert float(oracle) == pytest.approx(5.85, rel=1e-15)
    assert lambda_margin(p) == pytest.approx(4.85, rel=1e-14)


def test_lambda_above_bound_is_rejected():
    with pytest.raises(OutOfDomain) as info:
        validate_params(ModelParams(6.0, 0.8, 0.05))
    assert info.value.which == "lambda-upper-bound"


def test_n_above_m_is_rejected():
    with pytest.raises(OutOfDomain) as info:
        validate_params(ModelParams(0.5, 0.8, 0.9))
    assert info.value.which == "n<m"


@pytest.mark.parametrize(
    "raw, which",
    [
        (ModelParams(1.0, 0.0, 0.0), "m-range"),
        (ModelParams(1.0, 1.2, 0.1), "m-range"),
        (ModelParams(1.0, 0.8, -0.1), "n-nonnegative"),
        (ModelParams(0.0, 0.8, 0.05), "lambda-positive"),
        (ModelParams(math.nan, 0.8, 0.05), "finite"),
    ],
)
def test_each_domain_inequality_is_named(raw, which):
    with pytest.raises(OutOfDomain) as info:
        validate_params(raw)
    assert info.value.which == which


def test_n_zero_is_flagged_critical_only():
    p = validate_params(ModelParams(1.0, 0.8, 0.0))
    assert p.critical_only
    k = derive_constants(p)
    assert math.isinf(k.A) and math.isinf(k.B) and math.isinf(k.C)


def test_reference_constants_against_high_precision():
    k = derive_constants(validate_params(ModelParams(1.0, 0.8, 0.05)))
    ref = mp_constants(1.0, 0.8, 0.05)
    for name, value in ref.items():
        assert getattr(k, name) == pytest.approx(float(value), rel=1e-14), name
    assert k.a == pytest.approx(2.2571429, abs=1e-7)
    assert k.b == pytest.approx(0.2571429, abs=1e-7)
    assert k.c == pytest.approx(0.9238095, abs=1e-7)
    assert k.A == pytest.approx(33.857143, abs=1e-6)
    assert k.B == pytest.approx(13.857143, abs=1e-6)
    assert k.h == pytest.approx(0.2571429, abs=1e-7)


def test_lambda_zero_edge_with_m_one():
    k = derive_constants(ModelParams(0.0, 1.0, 0.0))
    assert k.a == 1.0
    assert k.b == -0.0


@pytest.mark.parametrize("lam", [0.3, 1.0, 7.5])
def test_m_one_n_zero_gives_c_one(lam):
    p = validate_params(ModelParams(lam, 1.0, 0.0))
    assert derive_constants(p).c == 1.0


@settings(max_examples=200, deadline=None)
@given(admissible())
def test_exact_identities(p):
    k = derive_constants(p)
    lam, m, n = p.lam, p.m, p.n
    s = 1.0 + m - n
    assert k.a * s == pytest.approx(2.0 - n + 2.0 * lam, rel=4 * 2.2e-16, abs=1e-15)
    assert k.b * s == pytest.approx((1.0 - m) + (1.0 - m + n) * lam, rel=1e-14, abs=1e-15)
    assert k.alpha == -2.0 / s
    assert k.beta == -(1.0 - m + n) / s
    assert k.d == pytest.approx((1.0 - m + 2.0 * lam) / s, rel=4 * 2.2e-16, abs=1e-15)
    assert k.A == pytest.approx((m - n) / n * k.a / lam, rel=4 * 2.2e-16)
    assert k.a > 0 and k.g > 0 and k.c > 0
    assert k.A > 0 and k.B > 0 and k.C > 0


@settings(max_examples=200, deadline=None)
@given(admissible(), st.floats(0.1, 10.0))
def test_lambda_from_initial_data_inverts_a(p, gamma0):
    k = derive_constants(p)
    u0 = k.a * gamma0
    lam = lambda_from_initial_data(gamma0, u0, p.m, p.n)
    assert lam == pytest.approx(p.lam, rel=1e-12, abs=1e-13)
    back = derive_constants(ModelParams(lam, p.m, p.n))
    assert back.a * gamma0 == pytest.approx(u0, rel=1e-12)


def test_lambda_from_reference_initial_data():
    assert lambda_from_initial_data(1.0, 2.2571429, 0.8, 0.05) == pytest.approx(1.0, abs=1e-7)


def test_ratio_just_below_lower_endpoint():
    lo, hi = admissible_ratio_interval(0.8, 0.05)
    assert lo == pytest.approx(1.1142857, abs=1e-7)
    with pytest.raises(RatioOutOfRange) as info:
        lambda_from_initial_data(1.0, lo * (1 - 1e-9), 0.8, 0.05)
    assert info.value.interval == (lo, hi)


@given(st.floats(0.01, 100.0))
def test_ratio_invariance(scale):
    a = derive_constants(ModelParams(1.0, 0.8, 0.05)).a
    ref = lambda_from_initial_data(1.0, a, 0.8, 0.05)
    assert lambda_from_initial_data(scale, scale * a, 0.8, 0.05) == pytest.approx(ref, rel=1e-13)


def test_nonpositive_initial_data():
    with pytest.raises(OutOfDomain):
        lambda_from_initial_data(0.0, 1.0, 0.8, 0.05)


def test_subcase_switches():
    assert is_double_eigenvalue_case(ModelParams(1.0, 0.55, 0.05))
    assert is_log_corrected_case(ModelParams(1.0, 0.55, 0.05))
    # e = 0 exactly at lambda = 1 - m when m - n = 1/2
    assert not is_log_corrected_case(ModelParams(0.45, 0.55, 0.05))
    assert not is_double_eigenvalue_case(ModelParams(1.0, 0.8, 0.05))
