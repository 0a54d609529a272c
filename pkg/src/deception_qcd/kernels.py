"""Backend selection for the batch kernels.

The compiled extension is preferred; the pure-numpy module is used when the
extension is missing or when ``DECEPTION_QCD_BACKEND=python``.
"""

from __future__ import annotations

import os

from . import _pykernels

FLAG_CONVERGED = 1
FLAG_FAILED = 2

_requested = os.environ.get("DECEPTION_QCD_BACKEND", "auto").lower()

try:
    if _requested == "python":
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _backend

    BACKEND = "cython"
except ImportError:
    _backend = _pykernels
    BACKEND = "python"

cubature_points = _backend.cubature_points
vb_update_linear = _backend.vb_update_linear
predictive_loglik = _backend.predictive_loglik


def compiled_available() -> bool:
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


def get_backend(name: str):
    """Return the kernel module by name (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
