"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``SEQATTN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SEQATTN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

conv1d_same_forward = _impl.conv1d_same_forward
conv1d_same_backward = _impl.conv1d_same_backward
edit_distance = _impl.edit_distance

__all__ = [
    "BACKEND",
    "conv1d_same_forward",
    "conv1d_same_backward",
    "edit_distance",
]
