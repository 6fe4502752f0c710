"""Numba switch.

Set ``MICALIB_NUMBA=0`` to force the pure-numpy kernels even when numba is
importable. The flag is read once at import time.
"""
import os

_flag = os.environ.get("MICALIB_NUMBA", "1").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` with nogil + on-disk cache, or identity without numba."""
    if not HAS_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("nogil", True)
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
