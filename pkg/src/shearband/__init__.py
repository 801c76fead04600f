"""Focusing self-similar shear bands: the (p, q, r) dynamical system, its
heteroclinic orbit, the similarity profiles it encodes and a direct PDE check."""

from __future__ import annotations

from .errors import CertificateError, DomainError, ShearbandError
from .params import DerivedConstants, ModelParams, ValidatedParams, derive_constants, validate_params

__all__ = [
    "CertificateError",
    "DerivedConstants",
    "DomainError",
    "ModelParams",
    "ShearbandError",
    "ValidatedParams",
    "derive_constants",
    "validate_params",
]
