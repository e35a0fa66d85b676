"""Optional numba acceleration.

Set ``REGIMEFX_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba
is not importable the numpy kernels are used as well.
"""
from __future__ import annotations

import os

_FLAG = "REGIMEFX_DISABLE_NUMBA"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def _flag_set() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAS_NUMBA and not _flag_set()


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is installed, identity otherwise.

    Decorated functions are only dispatched to when ``USE_NUMBA`` is true, but
    they are compiled lazily so importing never pays the JIT cost.
    """
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
