"""Backend switch for the hot kernels.

Set ``SHOCKMAINT_DISABLE_NUMBA=1`` before import to run every kernel as plain
Python/numpy. Results agree with the compiled path to rounding.
"""
import os

_FLAG = os.environ.get("SHOCKMAINT_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or the identity decorator on the fallback path."""
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        kwargs.setdefault("error_model", "numpy")
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

