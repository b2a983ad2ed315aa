"""JIT switch.

Kernels in :mod:`otca.kernels` come in two flavours: explicit loops compiled
with numba, and vectorized numpy. ``OTCA_NUMBA=0`` (or a missing numba)
selects the numpy path at import time.
"""
import os

_FLAG = os.environ.get("OTCA_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "error_model": "python",
    "boundscheck": False,
}


def njit(func):
    """Compile ``func`` with numba when available, else return it untouched."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(**numba_default)(func)
