from __future__ import annotations

import pytest

from shearband.heteroclinic import shoot_heteroclinic
from shearband.params import ModelParams, validate_params
from shearband.profiles import build_profile

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def ref_params():
    return validate_params(ModelParams(1.0, 0.8, 0.05))


@pytest.fixture(scope="session")
def ref_orbit(ref_params):
    return shoot_heteroclinic(ref_params)


@pytest.fixture(scope="session")
def ref_profile(ref_params):
    """Refined profile at Gamma0 = 1, shared because refinement costs a few seconds."""
    return build_profile(ref_params)


@pytest.fixture
def record():
    """Store one acceptance outcome; the summary line is printed at session end."""

    def _record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(ok), detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {detail}")
