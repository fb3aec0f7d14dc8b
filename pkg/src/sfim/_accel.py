"""Backend selection for the compiled kernels.

Numba is used when importable unless ``SFIM_NUMBA=0`` is set in the
environment; the flag is read once at import time.
"""

import os

_flag = os.environ.get("SFIM_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    if not _requested:
        raise ImportError
    import numba
    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

JIT_OPTIONS = dict(cache=True, nogil=True, fastmath=False)


def njit(fn):
    """``numba.njit`` when enabled, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(**JIT_OPTIONS)(fn)
    return fn


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
