"""Dense float64 tensor ops for the denoiser: conv2d, ReLU, losses, Adam.

Tensors are plain C-contiguous float64 ``numpy.ndarray``s.  Every op is a
pure function; nothing here mutates its inputs.  Single frames are
channels-first [C, H, W]; a leading batch axis [B, C, H, W] is accepted by
the conv and elementwise ops and handled by the same kernels.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import lowering
from .errors import NumericsError, ShapeMismatchError

PADDING_MODES = ("circular", "replicate", "zero")


def as_tensor(data) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=np.float64)


@dataclass(frozen=True)
class ConvLayerParams:
    """One convolution layer: weights [out_ch, in_ch, kh, kw], bias [out_ch].

    Odd kernel sides only; padding preserves spatial size.
    """

    weights: np.ndarray
    bias: np.ndarray
    padding_mode: str = "circular"

    def __post_init__(self):
        object.__setattr__(self, "weights", as_tensor(self.weights))
        object.__setattr__(self, "bias", as_tensor(self.bias))
        if self.weights.ndim != 4:
            raise ShapeMismatchError("conv weights rank", ("O", "I", "kh", "kw"),
                                     self.weights.shape)
        out_ch, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel sides must be odd, got {kh}x{kw}")
        if self.bias.shape != (out_ch,):
            raise ShapeMismatchError("conv bias", (out_ch,), self.bias.shape)
        if self.padding_mode not in PADDING_MODES:
            raise ValueError(f"unknown padding mode {self.padding_mode!r}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class AdamState:
    """Per-tensor Adam moments; shapes mirror the tracked parameter."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, param: np.ndarray, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param),
                   step_count=0, beta1=beta1, beta2=beta2, epsilon=epsilon)


def _split_batch(x: np.ndarray):
    # [C,H,W] -> internal [C,1,H,W] view; [B,C,H,W] -> [C,B,H,W] copy.
    if x.ndim == 3:
        return x.reshape(x.shape[0], 1, x.shape[1], x.shape[2]), True
    if x.ndim == 4:
        return np.ascontiguousarray(x.transpose(1, 0, 2, 3)), False
    raise ShapeMismatchError("conv input rank", ("C,H,W", "B,C,H,W"), x.shape)


def _merge_batch(x_cbhw: np.ndarray, single: bool) -> np.ndarray:
    if single:
        return x_cbhw.reshape(x_cbhw.shape[0], x_cbhw.shape[2], x_cbhw.shape[3])
    return np.ascontiguousarray(x_cbhw.transpose(1, 0, 2, 3))


def conv2d_forward(x: np.ndarray, layer: ConvLayerParams) -> np.ndarray:
    """Same-size 2-D cross-correlation plus bias under the layer's padding."""
    x = as_tensor(x)
    xi, single = _split_batch(x)
    out = lowering.conv_forward(xi, layer.weights, layer.bias,
                                layer.padding_mode)
    return _merge_batch(out, single)


def conv2d_backward(x: np.ndarray, layer: ConvLayerParams, grad_out: np.ndarray):
    """Gradients of ``conv2d_forward``: (grad_input, grad_weights, grad_bias)."""
    x = as_tensor(x)
    grad_out = as_tensor(grad_out)
    expected = (layer.out_channels,) + x.shape[-2:]
    if x.ndim == 4:
        expected = (x.shape[0],) + expected
    if grad_out.shape != expected:
        raise ShapeMismatchError("grad_out shape", expected, grad_out.shape)
    xi, single = _split_batch(x)
    gi, _ = _split_batch(grad_out)
    gx, gw, gb = lowering.conv_backward(xi, layer.weights, gi,
                                        layer.padding_mode, need_gx=True)
    return _merge_batch(gx, single), gw, gb


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    grad_out = as_tensor(grad_out)
    if x.shape != grad_out.shape:
        raise ShapeMismatchError("relu grad_out shape", x.shape, grad_out.shape)
    return np.where(x > 0.0, grad_out, 0.0)


def _binary(a: np.ndarray, b: np.ndarray, what: str):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(what, a.shape, b.shape)
    return a, b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _binary(a, b, "add operands")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _binary(a, b, "sub operands")
    return a - b


def scale(a: np.ndarray, factor: float) -> np.ndarray:
    return as_tensor(a) * float(factor)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of squared differences."""
    a, b = _binary(a, b, "mse operands")
    return float(np.mean((a - b) ** 2))


def mse_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """d mse(a, b) / d a."""
    a, b = _binary(a, b, "mse operands")
    return (2.0 / a.size) * (a - b)


def mae(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of absolute differences."""
    a, b = _binary(a, b, "mae operands")
    return float(np.mean(np.abs(a - b)))


def mae_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _binary(a, b, "mae operands")
    return np.sign(a - b) / a.size


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float):
    """One bias-corrected Adam update.  Returns (new_param, new_state)."""
    param, grad = _binary(param, grad, "adam param/grad")
    if state.m.shape != param.shape:
        raise ShapeMismatchError("adam state shape", param.shape, state.m.shape)
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite gradient in adam_step",
                            step_count=state.step_count)
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_param, replace(state, m=m, v=v, step_count=t)


# Raw tensor file format: magic "RFRT", u32 rank, u32 dims, f64 payload,
# everything little-endian, payload row-major.
_MAGIC = b"RFRT"


def write_tensor(fh, arr: np.ndarray) -> None:
    arr = as_tensor(arr)
    fh.write(_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8", copy=False).tobytes())


def read_tensor(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}, expected {_MAGIC!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError(f"truncated tensor payload: wanted {8 * count} bytes, "
                         f"got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
