"""Kernel backend selection.

The compiled extension is used when importable; set ``POSEREG_BACKEND=python``
to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("POSEREG_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

robust_value = _impl.robust_value
robust_system = _impl.robust_system
mean_closest_distance = _impl.mean_closest_distance


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"`` (ImportError if unbuilt)."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
