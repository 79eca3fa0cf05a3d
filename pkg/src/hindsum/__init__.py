"""Finite sums in dense sets of integers: exact sumset tools, Straus sets,
certificate search and orbit averages on affine torus systems."""
from __future__ import annotations

__version__ = "0.1.0"

from .kernels import BACKEND
from .setspec import SetSpec, as_mask, from_json, member
from .sumsets import FiniteNatSet, SumsetCertificate, check_thmA, check_thmB, oplus, oplus_brute, range_sums

__all__ = [
    "__version__",
    "BACKEND",
    "SetSpec",
    "as_mask",
    "from_json",
    "member",
    "FiniteNatSet",
    "SumsetCertificate",
    "check_thmA",
    "check_thmB",
    "oplus",
    "oplus_brute",
    "range_sums",
]
