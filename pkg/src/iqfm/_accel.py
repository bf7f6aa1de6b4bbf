"""Backend switch for the hot loops.

Numba is used when it imports cleanly and ``IQFM_NO_NUMBA`` is unset (or
``0``).  Setting ``IQFM_NO_NUMBA=1`` forces the pure-numpy kernels, which is
how the benchmark and the cross-backend tests exercise both paths.
"""
import os

_flag = os.environ.get("IQFM_NO_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("numba disabled by IQFM_NO_NUMBA")
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return None.

    Callers keep a numpy implementation next to each jitted one and pick
    whichever is not None, so a missing numba never changes results beyond
    floating point summation order.
    """
    if not HAVE_NUMBA:
        return None
    return _njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if HAVE_NUMBA else "numpy"
