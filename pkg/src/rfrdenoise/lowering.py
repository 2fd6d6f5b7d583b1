"""Convolution lowering: column-gather plus BLAS matmul.

Internal activation layout is channels-leading, [C, B, H, W], so that the
matmul output [C_out, B*H*W] is directly the next layer's input with no
transpose.  The column gather is the hot kernel; a compiled Cython version is
used when available and a pure-NumPy fallback otherwise.  Both produce the
identical column matrix, so results do not depend on the backend.

Set RFR_BACKEND=compiled|numpy to force a backend (default: compiled when
importable).
"""

import os
import threading

import numpy as np

from .errors import ShapeMismatchError
from . import _kernels_numpy

try:
    from . import _kernelext
except ImportError:  # pragma: no cover - build-dependent
    _kernelext = None

PAD_CODES = {"zero": 0, "circular": 1, "replicate": 2}

_FORCED = os.environ.get("RFR_BACKEND", "").strip().lower()
if _FORCED and _FORCED not in ("compiled", "numpy"):
    raise ValueError(f"RFR_BACKEND must be 'compiled' or 'numpy', got {_FORCED!r}")
if _FORCED == "compiled" and _kernelext is None:
    raise ImportError("RFR_BACKEND=compiled but the compiled kernel is not built")

_ACTIVE = _FORCED or ("compiled" if _kernelext is not None else "numpy")


def active_backend() -> str:
    """Name of the column-gather backend in use: 'compiled' or 'numpy'."""
    return _ACTIVE


def set_backend(name: str) -> None:
    """Switch backends at runtime (used by tests and the benchmark)."""
    global _ACTIVE
    if name not in ("compiled", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and _kernelext is None:
        raise ImportError("compiled kernel is not built")
    _ACTIVE = name


# Column buffers are large (tens to hundreds of MB); reallocating one per conv
# call costs more in page faults than the matmul itself saves.  Keep one
# buffer per shape per thread.
_local = threading.local()


def _col_buffer(k: int, n: int) -> np.ndarray:
    cache = getattr(_local, "cols", None)
    if cache is None:
        cache = _local.cols = {}
    buf = cache.get((k, n))
    if buf is None:
        if len(cache) > 8:
            cache.clear()
        buf = cache[(k, n)] = np.empty((k, n), dtype=np.float64)
    return buf


def _build_col(x: np.ndarray, kh: int, kw: int, pad_code: int) -> np.ndarray:
    c, b, h, w = x.shape
    col = _col_buffer(c * kh * kw, b * h * w)
    if _ACTIVE == "compiled":
        _kernelext.build_col(x, kh, kw, pad_code, col)
    else:
        _kernels_numpy.build_col(x, kh, kw, pad_code, col)
    return col


def conv_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None,
                 padding_mode: str) -> np.ndarray:
    """Same-size 2-D cross-correlation on a [C, B, H, W] block."""
    out_ch, in_ch, kh, kw = weights.shape
    if x.shape[0] != in_ch:
        raise ShapeMismatchError("conv input channels", (in_ch,), (x.shape[0],))
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeMismatchError("conv spatial size >= kernel", (kh, kw),
                                 x.shape[2:])
    _, b, h, w = x.shape
    x = np.ascontiguousarray(x, dtype=np.float64)
    col = _build_col(x, kh, kw, PAD_CODES[padding_mode])
    out = np.matmul(weights.reshape(out_ch, -1), col)
    if bias is not None:
        out += bias[:, None]
    return out.reshape(out_ch, b, h, w)


def _flip_transpose(weights: np.ndarray) -> np.ndarray:
    # [O, C, kh, kw] -> [C, O, kh_reversed, kw_reversed]; gradient w.r.t. the
    # input of a same-padded cross-correlation is the same operation with
    # these weights, for zero and circular boundaries.
    return np.ascontiguousarray(weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def _grad_input_replicate(gout: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Replicate padding is not conv-transposable: compute the gradient w.r.t.
    # the padded block, then fold each pad strip onto the clamped source row
    # or column it replicated.
    out_ch, in_ch, kh, kw = weights.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    _, b, h, w = gout.shape
    wf = _flip_transpose(weights)
    z = np.pad(gout, ((0, 0), (0, 0), (2 * ph, 2 * ph), (2 * pw, 2 * pw)))
    win = np.lib.stride_tricks.sliding_window_view(z, (kh, kw), axis=(2, 3))
    # gp[c, b, y, x] over the padded extent [H + 2ph, W + 2pw]
    gp = np.einsum("cokl,obyxkl->cbyx", wf, win, optimize=True)
    gx = gp[:, :, ph:ph + h, :].copy()
    if ph:
        gx[:, :, 0, :] += gp[:, :, :ph, :].sum(axis=2)
        gx[:, :, h - 1, :] += gp[:, :, ph + h:, :].sum(axis=2)
    out = gx[:, :, :, pw:pw + w].copy()
    if pw:
        out[:, :, :, 0] += gx[:, :, :, :pw].sum(axis=3)
        out[:, :, :, w - 1] += gx[:, :, :, pw + w:].sum(axis=3)
    return out


def conv_backward(x: np.ndarray, weights: np.ndarray, gout: np.ndarray,
                  padding_mode: str, need_gx: bool = True):
    """Gradients of ``conv_forward`` w.r.t. input, weights and bias.

    ``x`` is the forward input block [C_in, B, H, W]; ``gout`` the gradient at
    the output [C_out, B, H, W].  Returns (gx, gw, gb) with gx None when
    ``need_gx`` is false.
    """
    out_ch, in_ch, kh, kw = weights.shape
    if gout.shape != (out_ch,) + x.shape[1:]:
        raise ShapeMismatchError("conv grad_out shape",
                                 (out_ch,) + x.shape[1:], gout.shape)
    n = x.shape[1] * x.shape[2] * x.shape[3]
    x = np.ascontiguousarray(x, dtype=np.float64)
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    col = _build_col(x, kh, kw, PAD_CODES[padding_mode])
    gout_mat = gout.reshape(out_ch, n)
    # gw must be read out before the gx path below: when C_in == C_out the
    # nested conv_forward reuses this same column buffer.
    gw = np.matmul(gout_mat, col.T).reshape(weights.shape)
    gb = gout_mat.sum(axis=1)
    gx = None
    if need_gx:
        if padding_mode == "replicate":
            gx = _grad_input_replicate(gout, weights)
        else:
            gx = conv_forward(gout, _flip_transpose(weights), None, padding_mode)
    return gx, gw, gb
