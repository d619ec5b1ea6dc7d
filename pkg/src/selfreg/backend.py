"""Kernel backend selection.

The compiled Cython core is used when it imports; otherwise the pure-Python
twin.  Setting ``SELFREG_BACKEND=python`` forces the fallback (useful for
cross-checking), ``SELFREG_BACKEND=cython`` makes a missing build an error.
"""
from __future__ import annotations

import os

from . import _pycore


def _load(choice: str):
    if choice == "python":
        return _pycore
    try:
        from . import _core
    except ImportError:
        if choice == "cython":
            raise
        return _pycore
    return _core


def get_backend(name: str | None = None):
    """Kernel module for ``name`` ('cython', 'python' or None for the default)."""
    if name is None:
        return kernels
    if name not in ("cython", "python"):
        raise ValueError(f"unknown backend {name!r}")
    return _load(name)


def available_backends() -> list[str]:
    out = ["python"]
    try:
        from . import _core  # noqa: F401
        out.insert(0, "cython")
    except ImportError:
        pass
    return out


kernels = _load(os.environ.get("SELFREG_BACKEND", "auto").lower())
BACKEND = kernels.BACKEND
