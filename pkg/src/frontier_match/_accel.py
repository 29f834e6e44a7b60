"""Optional numba acceleration.

Kernels are written in the subset of numpy that numba compiles. When
``FRONTIER_MATCH_DISABLE_NUMBA`` is set to a truthy value (or numba is not
importable) the decorators below return the plain Python functions, so the
same code runs as ordinary numpy.
"""

import os
import warnings

_FALSY = {"", "0", "false", "no", "off"}


def _numba_disabled():
    return os.environ.get("FRONTIER_MATCH_DISABLE_NUMBA", "").strip().lower() not in _FALSY


try:
    if _numba_disabled():
        raise ImportError
    import numba as _numba
except ImportError:  # pragma: no cover - exercised via env flag in subprocess tests
    _numba = None

if _numba is not None:
    # an old system TBB only makes numba fall back to another threading layer
    warnings.filterwarnings("ignore", message="The TBB threading layer", category=_numba.NumbaWarning)

NUMBA_ENABLED = _numba is not None
BACKEND = "numba" if NUMBA_ENABLED else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise.

    Usable bare (``@njit``) or with options (``@njit(cache=True)``).
    """
    if len(args) == 1 and callable(args[0]) and not kwargs:
        fn = args[0]
        return _numba.njit(cache=True)(fn) if NUMBA_ENABLED else fn

    def wrap(fn):
        if not NUMBA_ENABLED:
            return fn
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)(fn)

    return wrap


if NUMBA_ENABLED:
    prange = _numba.prange
else:
    prange = range


def py_func(fn):
    """Return the uncompiled Python function behind a kernel."""
    return getattr(fn, "py_func", fn)
