"""Fixed-size spatial operators: 3x3 stride-2 convolution and its transpose,
bilinear prolongation, local-average restriction, decimation and ReLU.

No padding anywhere. A ``(2^p - 1)``-sized axis maps to ``2^(p-1) - 1`` under
convolution and back under the transpose, so output pixel ``(i, j)`` of a
convolution is centred on input pixel ``(2i + 1, 2j + 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

# Center-pick restriction stencil and bilinear prolongation stencil used to
# initialise deepening pairs.
C0_STENCIL = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
D0_STENCIL = np.array([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])


@dataclass
class ConvKernel:
    """Weights ``(C_out, C_in, 3, 3)`` and bias ``(C_out,)``."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4 or self.weight.shape[2:] != (3, 3):
            raise ShapeError(f"kernel weight must be (C_out, C_in, 3, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match C_out={self.weight.shape[0]}")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]


@dataclass
class DeconvKernel:
    """Weights ``(C_in, C_out, 3, 3)`` and bias ``(C_out,)``."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4 or self.weight.shape[2:] != (3, 3):
            raise ShapeError(f"kernel weight must be (C_in, C_out, 3, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match C_out={self.weight.shape[1]}")

    @property
    def c_in(self) -> int:
        return self.weight.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]


def coarse_size(n: int) -> int:
    if n < 3 or n % 2 == 0:
        raise ShapeError(f"spatial size must be odd and >= 3, got {n}")
    return (n - 1) // 2


def _windows(x: np.ndarray) -> np.ndarray:
    """Stride-2 3x3 patches of ``x``: shape ``(T, C, H', W', 3, 3)``."""
    coarse_size(x.shape[2])
    coarse_size(x.shape[3])
    return sliding_window_view(x, (3, 3), axis=(2, 3))[:, :, ::2, ::2]


def conv2d_forward(x: np.ndarray, k: ConvKernel) -> np.ndarray:
    if x.ndim != 4 or x.shape[1] != k.c_in:
        raise ShapeError(f"input {x.shape} incompatible with kernel {k.weight.shape}")
    win = _windows(x)
    out = np.tensordot(win, k.weight, axes=([1, 4, 5], [1, 2, 3]))  # (T, H', W', O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += k.bias[None, :, None, None]
    return out


def _scatter_stamp(y: np.ndarray, H: int, W: int) -> np.ndarray:
    """Overlap-add ``y`` of shape ``(T, H, W, C, 3, 3)`` into ``(T, C, 2H+1, 2W+1)``."""
    T, _, _, C = y.shape[:4]
    out = np.zeros((T, C, 2 * H + 1, 2 * W + 1))
    for u in range(3):
        for v in range(3):
            out[:, :, u:u + 2 * H:2, v:v + 2 * W:2] += y[..., u, v].transpose(0, 3, 1, 2)
    return out


def conv2d_backward(x: np.ndarray, k: ConvKernel, grad_out: np.ndarray, need_input_grad: bool = True):
    """Return ``(grad_x, grad_weight, grad_bias)``; ``grad_x`` is None when not requested."""
    T, _, H, W = x.shape
    expected = (T, k.c_out, coarse_size(H), coarse_size(W))
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output {expected}")
    win = _windows(x)
    grad_w = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, 3, 3)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = None
    if need_input_grad:
        y = np.tensordot(grad_out, k.weight, axes=([1], [0]))  # (T, H', W', C, 3, 3)
        grad_x = _scatter_stamp(y, expected[2], expected[3])
    return grad_x, grad_w, grad_b


def deconv2d_forward(x: np.ndarray, k: DeconvKernel) -> np.ndarray:
    if x.ndim != 4 or x.shape[1] != k.c_in:
        raise ShapeError(f"input {x.shape} incompatible with kernel {k.weight.shape}")
    _, _, H, W = x.shape
    y = np.tensordot(x, k.weight, axes=([1], [0]))  # (T, H, W, C_out, 3, 3)
    out = _scatter_stamp(y, H, W)
    out += k.bias[None, :, None, None]
    return out


def deconv2d_backward(x: np.ndarray, k: DeconvKernel, grad_out: np.ndarray, need_input_grad: bool = True):
    T, _, H, W = x.shape
    expected = (T, k.c_out, 2 * H + 1, 2 * W + 1)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output {expected}")
    win = _windows(grad_out)  # (T, O, H, W, 3, 3)
    grad_w = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))  # (C, O, 3, 3)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = None
    if need_input_grad:
        grad_x = np.tensordot(win, k.weight, axes=([1, 4, 5], [1, 2, 3]))  # (T, H, W, C)
        grad_x = np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2))
    return grad_x, grad_w, grad_b


_BILINEAR = DeconvKernel(D0_STENCIL[None, None], np.zeros(1))


def bilinear_upsample(x: np.ndarray) -> np.ndarray:
    """Fixed prolongation: transposed convolution with the bilinear stencil."""
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"bilinear_upsample expects (T, 1, H, W), got {x.shape}")
    return deconv2d_forward(x, _BILINEAR)


def decimate(f: np.ndarray) -> np.ndarray:
    """Odd-index subsampling ``out[..., i, j] = f[..., 2i+1, 2j+1]``."""
    coarse_size(f.shape[-2])
    coarse_size(f.shape[-1])
    return np.ascontiguousarray(f[..., 1::2, 1::2])


def local_average_downsample(f: np.ndarray) -> np.ndarray:
    """Mean over the 3x3 window centred at ``(2i+1, 2j+1)`` of an ``(H, W)`` field.

    The nine terms are summed in row-major window order before dividing by 9.
    """
    if f.ndim != 2:
        raise ShapeError(f"expected a 2-d field, got shape {f.shape}")
    Hc, Wc = coarse_size(f.shape[0]), coarse_size(f.shape[1])
    s = np.zeros((Hc, Wc))
    for u in range(3):
        for v in range(3):
            s += f[u:u + 2 * Hc:2, v:v + 2 * Wc:2]
    return s / 9.0


def relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, 0.0)
