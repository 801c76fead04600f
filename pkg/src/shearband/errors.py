"""Exception hierarchy.

Two families matter to callers: ``DomainError`` (bad input, CLI exit 1) and
``CertificateError`` (a numerical certificate could not be established for
otherwise valid input, CLI exit 2).
"""

from __future__ import annotations


class ShearbandError(Exception):
    """Base class for all library errors."""


class DomainError(ShearbandError, ValueError):
    pass


class CertificateError(ShearbandError, RuntimeError):
    pass


class OutOfDomain(DomainError):
    def __init__(self, which: str, message: str):
        self.which = which
        super().__init__(f"{which}: {message}")


class RatioOutOfRange(DomainError):
    def __init__(self, ratio: float, lower: float, upper: float):
        self.ratio = ratio
        self.interval = (lower, upper)
        super().__init__(
            f"U0/Gamma0 = {ratio!r} outside the admissible open interval ({lower!r}, {upper!r})"
        )


class NZero(DomainError):
    def __init__(self, what: str = "operation"):
        super().__init__(f"{what} requires n > 0 (parameters are critical-only)")


class InconsistentLambda(DomainError):
    pass


class RBarOutOfRange(DomainError):
    pass


class NonpositiveInput(DomainError):
    pass


class OutOfGrid(DomainError):
    pass


class DegenerateCase(DomainError):
    """Raised where the log-corrected regime m - n = 1/2 makes a fit meaningless."""


class EigenMismatch(ShearbandError, ArithmeticError):
    """Closed-form eigenpair disagrees with the Jacobian: an implementation bug."""


class StepFailure(ShearbandError, ArithmeticError):
    pass


class DomainExit(CertificateError):
    pass


class NoCapture(CertificateError):
    pass


class CertificateFailed(CertificateError):
    pass


class DegenerateNormal(CertificateError):
    pass


class FitFailure(CertificateError):
    pass


class StabilityViolation(ShearbandError, ArithmeticError):
    pass
