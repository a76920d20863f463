"""Numba switch.

Hot kernels are compiled with numba when it is importable and the
environment variable ``HSSELFSIM_DISABLE_NUMBA`` is unset (or ``0``).
Otherwise the pure numpy/scipy implementations in :mod:`hsselfsim.kernels`
are used. The flag is read once, at import time.
"""

import os

_flag = os.environ.get("HSSELFSIM_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("numba disabled by HSSELFSIM_DISABLE_NUMBA")
    from numba import njit as _numba_njit

    HAS_NUMBA = True
except ImportError:
    _numba_njit = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise.

    Kernels decorated this way still run (slowly) as plain Python when numba
    is missing, which keeps the numba variants testable everywhere.
    """
    if _numba_njit is not None:
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
