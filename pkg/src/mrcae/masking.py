"""Adaptive spatial masks gating widening-group features."""
from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from .conv_ops import coarse_size, local_average_downsample
from .errors import ShapeError
from .tensor_core import check_same_dims, reduce_time_mean_sq


@dataclass(frozen=True)
class SpatialMask:
    """Binary field on the coarse (feature) grid of one level."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ShapeError(f"mask must be 2-d, got shape {b.shape}")
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("mask values must be exactly 0 or 1")
        b = b.astype(bool)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @classmethod
    def ones(cls, shape) -> "SpatialMask":
        return cls(np.ones(shape, dtype=bool))

    @classmethod
    def zeros(cls, shape) -> "SpatialMask":
        return cls(np.zeros(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def active_count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, SpatialMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))

    # Run-length encoding over the row-major flattened bitmap. Runs alternate
    # starting with a (possibly empty) run of zeros.
    def to_rle(self) -> str:
        flat = self.bits.ravel()
        runs = []
        current, n = False, 0
        for b in flat:
            if b == current:
                n += 1
            else:
                runs.append(n)
                current, n = b, 1
        runs.append(n)
        raw = np.asarray(runs, dtype="<u4").tobytes()
        return base64.b64encode(raw).decode("ascii")

    @classmethod
    def from_rle(cls, text: str, shape) -> "SpatialMask":
        runs = np.frombuffer(base64.b64decode(text.encode("ascii"), validate=True), dtype="<u4")
        total = int(runs.sum())
        if total != shape[0] * shape[1]:
            raise ShapeError(f"RLE covers {total} cells, mask shape {tuple(shape)} needs {shape[0] * shape[1]}")
        values = np.arange(len(runs)) % 2 == 1
        flat = np.repeat(values, runs.astype(np.int64))
        return cls(flat.reshape(shape))


def averaged_residual(data: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Local average of the per-pixel time-mean squared residual, on the coarse grid."""
    check_same_dims(data, recon)
    if data.ndim != 4 or data.shape[1] != 1:
        raise ShapeError(f"expected (T, 1, H, W) tensors, got {data.shape}")
    return local_average_downsample(reduce_time_mean_sq(data, recon))


def compute_mask(data: np.ndarray, recon: np.ndarray, eps: float) -> SpatialMask:
    if eps < 0:
        raise ValueError(f"mask tolerance must be >= 0, got {eps}")
    return SpatialMask(averaged_residual(data, recon) >= eps)


def apply_mask(features: np.ndarray, mask: SpatialMask) -> np.ndarray:
    if features.shape[-2:] != mask.shape:
        raise ShapeError(f"feature grid {features.shape[-2:]} does not match mask {mask.shape}")
    # np.where instead of a product so masked-out cells are +0.0, never -0.0.
    return np.where(mask.bits, features, 0.0)


def mask_shape_for(h: int, w: int) -> tuple[int, int]:
    return coarse_size(h), coarse_size(w)
