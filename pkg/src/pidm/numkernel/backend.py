"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``PIDM_KERNELS=python`` forces the fallback.
"""
import os

from . import _kernels_py

_FORCED = os.environ.get("PIDM_KERNELS", "").lower()

if _FORCED == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise
        _impl = _kernels_py
        BACKEND = "python"

softmax_forward = _impl.softmax_forward
softmax_backward = _impl.softmax_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward


def available_backends():
    """Return a name -> kernel module mapping of every importable backend."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
