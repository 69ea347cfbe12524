"""Dense array conventions.

Every tensor in the package is a C-contiguous ``float64`` numpy array laid
out as ``(T, C, H, W)``: snapshots, channels, rows, columns, with columns
varying fastest. A scalar field is a plain ``(H, W)`` array.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def as_snapshots(x, *, name: str = "tensor") -> np.ndarray:
    """Validate and return ``x`` as a finite float64 ``(T, C, H, W)`` array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-d (T, C, H, W), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr


def check_same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    check_same_dims(a, b)
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}") from None
    return fn(a, b)


def flat_index(t: int, c: int, i: int, j: int, dims: tuple[int, int, int, int]) -> int:
    _, C, H, W = dims
    return ((t * C + c) * H + i) * W + j


def unflat_index(idx: int, dims: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
    _, C, H, W = dims
    idx, j = divmod(idx, W)
    idx, i = divmod(idx, H)
    t, c = divmod(idx, C)
    return t, c, i, j


def reduce_time_mean_sq(data: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Per-pixel squared residual averaged over snapshots, as an ``(H, W)`` field."""
    check_same_dims(data, recon)
    if data.ndim != 4 or data.shape[1] != 1:
        raise ShapeError(f"expected single-channel (T, 1, H, W) tensors, got {data.shape}")
    # Explicit sequential accumulation over t keeps the summation order fixed,
    # so mask thresholds are reproducible bit-for-bit.
    out = np.zeros(data.shape[2:], dtype=np.float64)
    for t in range(data.shape[0]):
        r = data[t, 0] - recon[t, 0]
        out += r * r
    return out / data.shape[0]
