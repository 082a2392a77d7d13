"""Numba switch.

Set ``DFM_NUMBA=0`` to force the pure-numpy code paths. Numba kernels are
compiled lazily and cached on disk.
"""
import os

_flag = os.environ.get("DFM_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

JIT_OPTIONS = {"nogil": True, "cache": True, "fastmath": False, "error_model": "numpy"}


def njit(func):
    """``numba.njit`` with the package options, or identity when disabled."""
    if USE_NUMBA:
        return numba.njit(**JIT_OPTIONS)(func)
    return func
