"""Synthetic snapshot generators, resolution pyramids and the data file format.

Grids are inclusive and uniform: with ``nx`` points on ``[a, b]``,
``x_i = a + (b - a) * i / (nx - 1)``. Axis 0 of a field (rows) runs along x,
axis 1 (columns) along y.
"""
from __future__ import annotations

import math
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .conv_ops import decimate
from .errors import BadMagicError, ChecksumError, ConfigError, FileFormatError, ShapeError, TruncatedFileError, VersionError
from .model import _exponent

MAGIC = b"MRCAE-DATA\0"
VERSION = 1
_HEADER = struct.Struct("<HIII")

TWO_MODES_DEFAULTS = {"omega0": 0.5, "omega1": 4.0, "sigma0": 10.0, "sigma1": 0.25}
# "v" is listed with the drifting example's settings but never enters its
# formulas (the drift speed 0.5 is fixed); it is carried for provenance only.
DRIFTING_DEFAULTS = {**TWO_MODES_DEFAULTS, "v": 1.0}
DEFAULT_DOMAIN = (-5.0, 5.0, -5.0, 5.0)


def _check_grid(nx: int, ny: int, nt: int) -> None:
    if _exponent(nx) is None or _exponent(ny) is None:
        raise ShapeError(f"grid sizes must have the form 2^p - 1, got nx={nx}, ny={ny}")
    if nt < 1:
        raise ShapeError(f"need at least one snapshot, got nt={nt}")


def grid_coords(nx: int, ny: int, domain=DEFAULT_DOMAIN) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates ``(X, Y)`` of shape ``(nx, ny)``."""
    x0, x1, y0, y1 = domain
    x = x0 + (x1 - x0) * np.arange(nx) / (nx - 1)
    y = y0 + (y1 - y0) * np.arange(ny) / (ny - 1)
    return np.meshgrid(x, y, indexing="ij")


def time_samples(nt: int, t_range) -> np.ndarray:
    t0, t1 = t_range
    if nt == 1:
        return np.array([float(t0)])
    return t0 + (t1 - t0) * np.arange(nt) / (nt - 1)


def _background(X, Y, sigma0):
    return np.cosh((X + 1.0) / sigma0) * np.cosh((Y - 1.0) / sigma0)


def _bump(X, Y, cx, cy, sigma1):
    return np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * sigma1**2)) / math.sqrt(2.0 * math.pi * sigma1)


def gen_two_modes(nx=127, ny=127, nt=500, params=None, domain=DEFAULT_DOMAIN, t_range=(0.0, 8.0 * math.pi)) -> np.ndarray:
    """Slow cosh background plus a narrow Gaussian bump at (1, -1), each with its own frequency."""
    _check_grid(nx, ny, nt)
    p = {**TWO_MODES_DEFAULTS, **(params or {})}
    X, Y = grid_coords(nx, ny, domain)
    u = _background(X, Y, p["sigma0"])
    v = _bump(X, Y, 1.0, -1.0, p["sigma1"])
    t = time_samples(nt, t_range)
    a = np.cos(p["omega0"] * t)
    b = np.cos(p["omega1"] * t + math.pi / 4)
    out = a[:, None, None] * u[None] + b[:, None, None] * v[None]
    return np.ascontiguousarray(out[:, None])


def gen_drifting_modes(nx=127, ny=127, nt=500, params=None, domain=DEFAULT_DOMAIN, t_range=(0.0, 4.0 * math.pi)) -> np.ndarray:
    """As :func:`gen_two_modes`, but the bump centre moves along (3 - t/2, -3 + t/2)."""
    _check_grid(nx, ny, nt)
    p = {**DRIFTING_DEFAULTS, **(params or {})}
    X, Y = grid_coords(nx, ny, domain)
    u = _background(X, Y, p["sigma0"])
    t = time_samples(nt, t_range)
    out = np.empty((nt, 1, nx, ny))
    for i, ti in enumerate(t):
        v = _bump(X, Y, 3.0 - 0.5 * ti, -3.0 + 0.5 * ti, p["sigma1"])
        out[i, 0] = u * math.cos(p["omega0"] * ti) + v * math.cos(p["omega1"] * ti + math.pi / 4)
    return out


GENERATORS = {"modes2": gen_two_modes, "modes2-drift": gen_drifting_modes}


def resize_bilinear(fields: np.ndarray, H: int, W: int) -> np.ndarray:
    """Approximate resampling of ``(T, h, w)`` fields onto an ``H x W`` grid.

    Endpoints map to endpoints. Meant only to bring external data onto a
    ``2^p - 1`` grid before ingestion; it is not a conservative remap.
    """
    fields = np.asarray(fields, dtype=np.float64)
    T, h, w = fields.shape
    r = np.linspace(0, h - 1, H)
    c = np.linspace(0, w - 1, W)
    R, Cc = np.meshgrid(r, c, indexing="ij")
    out = np.empty((T, 1, H, W))
    for t in range(T):
        out[t, 0] = map_coordinates(fields[t], [R, Cc], order=1, mode="nearest")
    return out


# -- pyramid -------------------------------------------------------------


@dataclass
class DataPyramid:
    """Data at N resolutions, coarse to fine, with one split shared across levels."""

    levels: list[np.ndarray]
    split: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> np.ndarray:
        return self.levels[-1]

    def get(self, k: int, split: str | None = None) -> np.ndarray:
        x = self.levels[k]
        return x if split is None else np.ascontiguousarray(x[self.split[split]])


def split_indices(T: int, seed: int) -> dict[str, np.ndarray]:
    """Shuffled 70/20/10 partition of ``range(T)``; each part sorted."""
    n_train, n_val = 7 * T // 10, 2 * T // 10
    perm = np.random.default_rng(seed).permutation(T)
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def build_pyramid(finest: np.ndarray, n_levels: int, seed: int = 0, provenance=None) -> DataPyramid:
    if finest.ndim != 4 or finest.shape[1] != 1:
        raise ShapeError(f"finest data must be (T, 1, H, W), got {finest.shape}")
    H, W = finest.shape[2:]
    p, q = _exponent(H), _exponent(W)
    if p is None or q is None:
        raise ConfigError(f"data dims must have the form 2^p - 1, got {(H, W)}")
    if n_levels < 1 or p <= n_levels or q <= n_levels:
        raise ConfigError(f"data dims {(H, W)} cannot support {n_levels} levels (need p, q > N)")
    levels = [np.ascontiguousarray(finest, dtype=np.float64)]
    for _ in range(n_levels - 1):
        levels.insert(0, decimate(levels[0]))
    prov = {"seed": seed, **(provenance or {})}
    return DataPyramid(levels, split_indices(finest.shape[0], seed), prov)


# -- data files ----------------------------------------------------------


def data_bytes(t: np.ndarray) -> bytes:
    if t.ndim == 4:
        if t.shape[1] != 1:
            raise ShapeError(f"data files hold single-channel snapshots, got {t.shape}")
        t = t[:, 0]
    if t.ndim != 3:
        raise ShapeError(f"expected (T, H, W) or (T, 1, H, W), got {t.shape}")
    T, H, W = t.shape
    body = MAGIC + _HEADER.pack(VERSION, T, H, W) + np.ascontiguousarray(t, dtype="<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def write_data(t: np.ndarray, path) -> int:
    """Write snapshots to ``path``; returns the CRC32 stored in the file."""
    data = data_bytes(t)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return struct.unpack("<I", data[-4:])[0]


def parse_data(buf: bytes) -> np.ndarray:
    fixed = len(MAGIC) + _HEADER.size
    if buf[: len(MAGIC)] != MAGIC:
        if len(buf) < len(MAGIC) and MAGIC.startswith(buf):
            raise TruncatedFileError("file ends inside the magic number")
        raise BadMagicError("not an MrCAE data file (bad magic)")
    if len(buf) < fixed:
        raise TruncatedFileError(f"file is {len(buf)} bytes, shorter than the {fixed}-byte header")
    version, T, H, W = _HEADER.unpack_from(buf, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"data format version {version}, this build reads version {VERSION}")
    expected = fixed + 8 * T * H * W + 4
    if len(buf) != expected:
        # An intact file (valid trailing CRC) whose header disagrees with its
        # payload is malformed; otherwise bytes are missing.
        crc_ok = len(buf) >= fixed + 4 and zlib.crc32(buf[:-4]) == struct.unpack("<I", buf[-4:])[0]
        if len(buf) > expected or crc_ok:
            raise FileFormatError(f"header dims (T={T}, H={H}, W={W}) need {expected} bytes, file has {len(buf)}")
        raise TruncatedFileError(f"file is {len(buf)} bytes, header dims need {expected}")
    (stored,) = struct.unpack_from("<I", buf, expected - 4)
    if zlib.crc32(buf[: expected - 4]) != stored:
        raise ChecksumError("data file CRC32 mismatch")
    if min(T, H, W) < 1:
        raise FileFormatError(f"empty dims in header: T={T}, H={H}, W={W}")
    vals = np.frombuffer(buf, dtype="<f8", count=T * H * W, offset=fixed)
    return vals.reshape(T, 1, H, W).astype(np.float64)


def read_data(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_data(fh.read())
