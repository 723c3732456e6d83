"""Optional numba acceleration.

Kernels are written once as plain loops and compiled with ``njit`` when numba
is importable. Setting ``DYNMAP_DISABLE_NUMBA=1`` selects the vectorised numpy
fallbacks instead; both paths are kept numerically equivalent and are
cross-checked in the test suite.
"""

from __future__ import annotations

import os

ENV_FLAG = "DYNMAP_DISABLE_NUMBA"

_disabled = os.environ.get(ENV_FLAG, "").strip().lower() not in ("", "0", "false", "no")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is an optional extra
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
