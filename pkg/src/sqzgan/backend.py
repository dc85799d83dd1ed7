"""Kernel backend selection: compiled extension if available, numpy fallback.

Set SQZGAN_BACKEND=python or SQZGAN_BACKEND=compiled to force one side
(forcing `compiled` raises if the extension is missing). Both backends
produce bitwise-identical convolution results at a given precision.
"""

import os

from . import _conv_fallback

_FORCE = os.environ.get("SQZGAN_BACKEND", "auto").lower()
if _FORCE not in ("auto", "python", "compiled"):
    raise ValueError(f"SQZGAN_BACKEND must be auto|python|compiled, got {_FORCE!r}")

_compiled = None
if _FORCE != "python":
    try:
        from . import _conv_cython as _compiled  # type: ignore[no-redef]
    except ImportError:
        if _FORCE == "compiled":
            raise
        _compiled = None

_active = _compiled if _compiled is not None else _conv_fallback


def name() -> str:
    """Name of the backend in use: 'compiled' or 'python'."""
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def conv2d_valid(x, w):
    """Valid cross-correlation, dispatched to the active backend."""
    return _active.conv2d_valid(x, w)


def get(which: str):
    """Return a specific backend module by name (for benchmarks and tests)."""
    if which == "python":
        return _conv_fallback
    if which == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel extension is not built")
        return _compiled
    raise ValueError(f"unknown backend {which!r}")


def available() -> tuple:
    """Names of all importable backends."""
    return ("compiled", "python") if _compiled is not None else ("python",)
