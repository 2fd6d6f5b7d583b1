# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled column-gather kernel for 2-D same-convolution.

Lowers an activation block of shape [C, B, H, W] into the column matrix
[C*kh*kw, B*H*W] that the BLAS matmul consumes.  Row k = (c, di, dj) of the
column matrix holds, for every output position (b, h, w), the input value at
spatial offset (di - kh//2, dj - kw//2) under the requested boundary rule.

The pure-NumPy lowering in ``_kernels_numpy`` produces the identical matrix;
this version avoids the padded intermediate and the transpose copy, doing one
ordered pass of row-segment copies instead.
"""

from libc.string cimport memcpy

ctypedef Py_ssize_t idx

# Must match rfrdenoise.lowering.PAD_CODES.
DEF PAD_ZERO = 0
DEF PAD_CIRCULAR = 1
DEF PAD_REPLICATE = 2


cdef inline void _fill(double* dst, idx n, double value) nogil:
    cdef idx i
    for i in range(n):
        dst[i] = value


cdef inline void _copy_row(double* dst, const double* src, idx W, idx d,
                           int pad_mode) nogil:
    """Write one output row: src row shifted left by d columns (|d| < W)."""
    cdef idx i
    if d == 0:
        memcpy(dst, src, W * sizeof(double))
    elif d > 0:
        # dst[i] = src[i + d] for i < W - d; right edge depends on the mode.
        memcpy(dst, src + d, (W - d) * sizeof(double))
        if pad_mode == PAD_CIRCULAR:
            memcpy(dst + (W - d), src, d * sizeof(double))
        elif pad_mode == PAD_REPLICATE:
            _fill(dst + (W - d), d, src[W - 1])
        else:
            _fill(dst + (W - d), d, 0.0)
    else:
        # dst[i] = src[i + d] for i >= -d; left edge depends on the mode.
        memcpy(dst - d, src, (W + d) * sizeof(double))
        if pad_mode == PAD_CIRCULAR:
            memcpy(dst, src + (W + d), (-d) * sizeof(double))
        elif pad_mode == PAD_REPLICATE:
            _fill(dst, -d, src[0])
        else:
            _fill(dst, -d, 0.0)


def build_col(const double[:, :, :, ::1] x, idx kh, idx kw, int pad_mode,
              double[:, ::1] col):
    """Fill ``col`` ([C*kh*kw, B*H*W], preallocated) from ``x`` ([C, B, H, W])."""
    cdef idx C = x.shape[0], B = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef idx ph = (kh - 1) // 2, pw = (kw - 1) // 2
    cdef idx c, di, dj, b, h, k, sh, d
    cdef const double* src
    cdef double* dst
    if col.shape[0] != C * kh * kw or col.shape[1] != B * H * W:
        raise ValueError("column buffer has the wrong shape")
    with nogil:
        for c in range(C):
            for di in range(kh):
                for dj in range(kw):
                    k = (c * kh + di) * kw + dj
                    d = dj - pw
                    for b in range(B):
                        for h in range(H):
                            dst = &col[k, (b * H + h) * W]
                            sh = h + di - ph
                            if sh < 0 or sh >= H:
                                if pad_mode == PAD_CIRCULAR:
                                    sh = sh % H
                                    if sh < 0:
                                        sh += H
                                elif pad_mode == PAD_REPLICATE:
                                    sh = 0 if sh < 0 else H - 1
                                else:
                                    _fill(dst, W, 0.0)
                                    continue
                            src = &x[c, b, sh, 0]
                            _copy_row(dst, src, W, d, pad_mode)
