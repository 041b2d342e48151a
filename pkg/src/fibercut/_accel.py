"""Numba switch shared by every hot kernel.

Set ``FIBERCUT_DISABLE_NUMBA=1`` to force the pure numpy/python paths.
Kernels are always compiled when numba is importable so that both paths
stay callable side by side; the flag only decides which one the public
functions dispatch to.
"""
from __future__ import annotations

import contextlib
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

NUMBA_AVAILABLE = numba is not None

_FLAG = os.environ.get("FIBERCUT_DISABLE_NUMBA", "").strip().lower()
_enabled = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` in nopython mode if numba is present, else return it."""
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)


def enabled() -> bool:
    return _enabled


def pyfunc(kernel):
    """Return the interpreted version of a kernel built with :func:`njit`."""
    return getattr(kernel, "py_func", kernel)


@contextlib.contextmanager
def use_numba(flag: bool):
    """Temporarily select the numba (True) or fallback (False) path."""
    global _enabled
    old = _enabled
    _enabled = bool(flag) and NUMBA_AVAILABLE
    try:
        yield
    finally:
        _enabled = old
