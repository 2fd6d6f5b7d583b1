"""Pure-NumPy fallback for the column-gather kernel.

Produces bit-identical output to the compiled ``_kernelext.build_col`` so the
two backends are interchangeable: both lower to the same [C*kh*kw, B*H*W]
matrix and the same BLAS call.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_PAD_NAMES = {0: "constant", 1: "wrap", 2: "edge"}


def build_col(x: np.ndarray, kh: int, kw: int, pad_mode: int,
              col: np.ndarray) -> None:
    """Fill ``col`` ([C*kh*kw, B*H*W], preallocated) from ``x`` ([C, B, H, W])."""
    c, b, h, w = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)),
                    mode=_PAD_NAMES[pad_mode])
    win = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # [C,B,H,W,kh,kw]
    ordered = win.transpose(0, 4, 5, 1, 2, 3)                 # [C,kh,kw,B,H,W]
    np.copyto(col.reshape(c, kh, kw, b, h, w), ordered)
