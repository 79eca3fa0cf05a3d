"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy versions.
Setting HINDSUM_PURE_PYTHON=1 forces the numpy path.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

_compiled: ModuleType | None
try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and os.environ.get("HINDSUM_PURE_PYTHON", "") != "1":
    _impl: ModuleType = _compiled
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "numpy"

advance_mod = _impl.advance_mod
advance_fx = _impl.advance_fx
product_average_fx = _impl.product_average_fx
PREFERRED_BLOCK: int = _impl.PREFERRED_BLOCK


def available_backends() -> dict[str, ModuleType]:
    out = {"numpy": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
