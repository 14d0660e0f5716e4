"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; setting
SHEPHERD_PURE_PYTHON=1 forces the NumPy fallback (useful for the
benchmark and for debugging). Both backends expose `flock_terms` and
`admm_chunk` with identical signatures.
"""
from __future__ import annotations

import os

from shepherd import _kernels_py

_FORCED_PY = os.environ.get("SHEPHERD_PURE_PYTHON", "") not in ("", "0")

if not _FORCED_PY:
    try:
        from shepherd import _kernels as _impl  # compiled extension
        COMPILED = True
    except ImportError:
        _impl = _kernels_py
        COMPILED = False
else:
    _impl = _kernels_py
    COMPILED = False

flock_terms = _impl.flock_terms
admm_chunk = _impl.admm_chunk
CoincidentAgentsError = _kernels_py.CoincidentAgentsError


def backend_name() -> str:
    return "compiled" if COMPILED else "numpy"
