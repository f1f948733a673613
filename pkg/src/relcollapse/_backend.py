"""Backend selection for the hot numerical kernels.

Every hot loop in :mod:`relcollapse._kernels` exists twice: a numba
``@njit`` version and a vectorised numpy twin.  The numba path is used when
numba imports cleanly and the environment variable ``ARTIFACT_NUMBA`` is not
set to ``0``.  Results from the two paths agree to round-off; each path on its
own is bitwise reproducible.
"""
from __future__ import annotations

import os

try:  # pragma: no cover - depends on the environment
    import numba as _numba

    HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _numba = None
    HAVE_NUMBA = False


def numba_requested() -> bool:
    """True unless ``ARTIFACT_NUMBA`` is set to a false-like value."""
    flag = os.environ.get("ARTIFACT_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and numba_requested()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Compilation is lazy, so decorating is cheap even when the numpy path is
    selected at run time.
    """
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]

    def deco(fn):
        return fn

    return deco


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
