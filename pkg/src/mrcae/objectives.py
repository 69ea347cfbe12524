"""Level loss (weighted MSE + worst-pixel term) and the finest-grid global metric."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv_ops import bilinear_upsample, decimate
from .errors import ConfigError, ShapeError
from .tensor_core import check_same_dims, reduce_time_mean_sq


@dataclass(frozen=True)
class LossValue:
    total: float
    mse_part: float
    max_part: float
    omega: float


def _check_omega(omega: float) -> None:
    if not 0.0 <= omega <= 1.0:
        raise ConfigError(f"omega must lie in [0, 1], got {omega}")


def level_loss(data: np.ndarray, recon: np.ndarray, omega: float) -> LossValue:
    _check_omega(omega)
    check_same_dims(data, recon)
    per_pixel = reduce_time_mean_sq(data, recon)
    mse = float(per_pixel.mean())
    mx = float(per_pixel.max())
    return LossValue(omega * mse + (1.0 - omega) * mx, mse, mx, omega)


def level_loss_backward(data: np.ndarray, recon: np.ndarray, omega: float) -> np.ndarray:
    """Subgradient of the level loss with respect to ``recon``.

    The worst-pixel term routes its gradient through a single pixel; ties go
    to the lowest flat index (what ``argmax`` returns).
    """
    _check_omega(omega)
    check_same_dims(data, recon)
    T, _, H, W = data.shape
    diff = recon - data
    grad = (omega * 2.0 / (T * H * W)) * diff
    if omega < 1.0:
        per_pixel = reduce_time_mean_sq(data, recon)
        i, j = np.unravel_index(int(np.argmax(per_pixel)), per_pixel.shape)
        grad[:, 0, i, j] += ((1.0 - omega) * 2.0 / T) * diff[:, 0, i, j]
    return grad


def restrict(finest: np.ndarray, times: int) -> np.ndarray:
    out = finest
    for _ in range(times):
        out = decimate(out)
    return out


def prolong(x: np.ndarray, times: int) -> np.ndarray:
    out = x
    for _ in range(times):
        out = bilinear_upsample(out)
    return out


def global_loss(model, k: int, finest: np.ndarray, omega: float) -> LossValue:
    """Reconstruct at level ``k`` and score the prolonged result on the finest grid."""
    n_up = model.n_levels - 1 - k
    if n_up < 0:
        raise ShapeError(f"level {k} out of range for a {model.n_levels}-level model")
    if finest.shape[2:] != model.level_dims(model.n_levels - 1):
        raise ShapeError(
            f"finest data {finest.shape[2:]} does not match model finest dims {model.level_dims(model.n_levels - 1)}"
        )
    recon = model.forward(restrict(finest, n_up), k)
    return level_loss(finest, prolong(recon, n_up), omega)
