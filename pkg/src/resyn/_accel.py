"""
Numba switch.

Hot kernels are compiled with ``numba.njit`` unless ``RESYN_DISABLE_NUMBA`` is
set to a truthy value (or numba is not importable), in which case the pure
numpy implementations in :mod:`resyn.kernels` are used instead.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("RESYN_DISABLE_NUMBA", "").strip().lower() in _FALSY
CACHE_NUMBA = os.environ.get("RESYN_NUMBA_CACHE", "1").strip().lower() not in _FALSY


def njit(func):
    """Compile ``func`` in nopython mode when numba is available, else return it."""
    if HAS_NUMBA:
        return numba.njit(cache=CACHE_NUMBA)(func)
    return func
