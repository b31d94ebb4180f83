"""Pure-numpy fallback for the compiled gather kernel.

Builds the same [B*L, k*C] column matrix via a zero-padded buffer and a
strided view. ascontiguousarray performs the actual gather copy; reshaping
the overlapping view directly would take numpy's slow element-wise path.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col_1d(x: np.ndarray, cols: np.ndarray, k: int, dilation: int) -> None:
    B, L, C = x.shape
    half = (k // 2) * dilation
    xp = np.zeros((B, L + 2 * half, C), dtype=x.dtype)
    xp[:, half : half + L] = x
    sb, sl, sc = xp.strides
    view = as_strided(xp, (B, L, k, C), (sb, sl, dilation * sl, sc))
    np.copyto(cols.reshape(B, L, k, C), view)
