"""Optional numba acceleration.

Set ``WEARCAP_NUMBA=0`` before import to force the pure-numpy paths.
"""
import os

USE_NUMBA = os.environ.get("WEARCAP_NUMBA", "1").lower() not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:
    def njit(fn):
        return _njit(cache=True, nogil=True)(fn)
else:
    def njit(fn):
        return fn
