# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: the im2col gather behind every dilated convolution.

The gather turns a zero-same-padded dilated 1-D convolution into one tall
GEMM, which is where the BLAS actually delivers throughput. Bounds handling
is done here instead of materializing a padded copy, so the interior of each
tap is a straight contiguous copy the compiler can vectorize.
"""

ctypedef fused real:
    float
    double


def im2col_1d(real[:, :, ::1] x, real[:, ::1] cols, Py_ssize_t k, Py_ssize_t dilation):
    """Gather [B, L, C] into [B*L, k*C] columns for a centered dilated conv.

    Tap j of column row (b, l) reads x[b, l + (j - k//2) * dilation, :],
    substituting zeros outside [0, L).
    """
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t center = k // 2
    cdef Py_ssize_t b, l, j, c, off, lo, hi, base, row
    if cols.shape[0] != B * L or cols.shape[1] != k * C:
        raise ValueError("cols must have shape [B*L, k*C]")
    for b in range(B):
        for j in range(k):
            off = (j - center) * dilation
            lo = -off if off < 0 else 0
            hi = L - off if off > 0 else L
            if hi < lo:
                lo = hi = 0
            base = j * C
            for l in range(lo):
                row = b * L + l
                for c in range(C):
                    cols[row, base + c] = 0.0
            for l in range(lo, hi):
                row = b * L + l
                for c in range(C):
                    cols[row, base + c] = x[b, l + off, c]
            for l in range(hi, L):
                row = b * L + l
                for c in range(C):
                    cols[row, base + c] = 0.0
