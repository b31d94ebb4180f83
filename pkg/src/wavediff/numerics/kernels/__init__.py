"""Backend selection for the convolution gather kernel.

The compiled Cython core is used when the extension built; otherwise the
numpy fallback takes over. Set WAVEDIFF_KERNELS=python or =compiled to force
a backend (the latter raises if the extension is missing).
"""

from __future__ import annotations

import os

import numpy as np

from .. import buffers
from . import _ref

_requested = os.environ.get("WAVEDIFF_KERNELS", "").lower()

_compiled = None
if _requested != "python":
    try:
        from . import _core as _compiled
    except ImportError:
        if _requested == "compiled":
            raise
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _ref


def im2col_1d(x: np.ndarray, k: int, dilation: int) -> np.ndarray:
    """Column matrix [B*L, k*C] for a centered dilated conv over [B, L, C]."""
    B, L, C = x.shape
    cols = buffers.take((B * L, k * C), x.dtype)
    _impl.im2col_1d(np.ascontiguousarray(x), cols, k, dilation)
    return cols
