"""Numba switch for the hot kernels.

Set ``PAYLOAD_NMPC_NUMBA=0`` before import to run every kernel as plain
numpy/Python. Both paths execute the same source.
"""

import os

USE_NUMBA = os.environ.get("PAYLOAD_NMPC_NUMBA", "1").lower() not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def jit(fn):
    if USE_NUMBA:
        return _njit(cache=True)(fn)
    return fn
