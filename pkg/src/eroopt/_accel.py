"""Numba switch.

Set ``EROOPT_NUMBA=0`` to force the pure-numpy code paths, e.g. for debugging
or on platforms without numba. The choice is made once, at import time.
"""

import os

_FLAG = os.environ.get("EROOPT_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched without numba."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)
