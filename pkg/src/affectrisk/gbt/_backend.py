"""Kernel selection: compiled core when importable, numpy otherwise.

Set ``AFFECTRISK_PURE=1`` to force the numpy kernels.
"""
import os

from . import _fallback

if os.environ.get("AFFECTRISK_PURE") == "1":
    _core = None
else:
    try:
        from . import _splitcore as _core
    except ImportError:
        _core = None

BACKEND = "compiled" if _core is not None else "numpy"
_impl = _core if _core is not None else _fallback


def get_kernels(name=None):
    """Return the kernel module for ``name`` ('compiled', 'numpy' or None for the default)."""
    if name is None:
        return _impl
    if name == "numpy":
        return _fallback
    if name == "compiled":
        if _core is None:
            raise ImportError("compiled split core is not available")
        return _core
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    """True when the compiled core loaded and was not disabled."""
    return _core is not None
