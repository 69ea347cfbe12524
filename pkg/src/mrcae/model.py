"""The multi-resolution convolutional autoencoder and its growth operations.

Level ``k`` of an ``N``-level model reconstructs fields of size
``2^(p-N+1+k) - 1`` per axis. Its output is

    f_k(x) = d_k(f_{k-1}(c_k(x))) + sum_j d_kj(act(mask_kj * c_kj(x)))

with ``f_{-1}`` the identity, so the innermost latent is the composition of
all deepening convolutions applied to the top-level input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conv_ops
from .conv_ops import C0_STENCIL, D0_STENCIL, ConvKernel, DeconvKernel, coarse_size
from .errors import ConfigError, GrowthError, ShapeError, TopologyError
from .masking import SpatialMask

ACTIVATIONS = ("linear", "relu")


def _exponent(n: int) -> int | None:
    """Return p when n == 2^p - 1, else None."""
    m = n + 1
    if n < 1 or m & (m - 1):
        return None
    return m.bit_length() - 1


@dataclass
class WideningGroup:
    conv: ConvKernel
    deconv: DeconvKernel
    mask: SpatialMask
    activation: str = "linear"

    @property
    def channels(self) -> int:
        return self.conv.c_out


@dataclass
class LevelBlock:
    index: int
    dims: tuple[int, int]
    deepen_conv: ConvKernel
    deepen_deconv: DeconvKernel
    groups: list[WideningGroup] = field(default_factory=list)

    @property
    def coarse_dims(self) -> tuple[int, int]:
        return coarse_size(self.dims[0]), coarse_size(self.dims[1])


@dataclass
class Encoding:
    """Sparse latent code: innermost field plus masked group features.

    ``group_features[(level, j)]`` has shape ``(T, g, active_count)`` holding
    the feature values at the mask's active cells in row-major order.
    """

    innermost: np.ndarray
    group_features: dict[tuple[int, int], np.ndarray]
    layout: dict[tuple[int, int], SpatialMask]

    @property
    def n_snapshots(self) -> int:
        return self.innermost.shape[0]

    def payload_length(self) -> int:
        """Stored values per snapshot."""
        n = self.innermost[0].size
        for f in self.group_features.values():
            n += f.shape[1] * f.shape[2]
        return int(n)


@dataclass
class _Cache:
    k: int
    xs: list[np.ndarray]
    innermost: np.ndarray
    pre: list[np.ndarray | None]
    feats: list[np.ndarray | None]
    dec_in: list[np.ndarray]
    ys: list[np.ndarray]


class MrCaeModel:
    def __init__(self, finest_dims, n_levels: int, activation: str = "linear", metadata=None):
        H, W = (int(d) for d in finest_dims)
        if n_levels < 1:
            raise ConfigError(f"need at least one level, got {n_levels}")
        p, q = _exponent(H), _exponent(W)
        if p is None or q is None:
            raise ConfigError(f"finest dims must have the form 2^p - 1, got {(H, W)}")
        if p <= n_levels or q <= n_levels:
            raise ConfigError(
                f"dims {(H, W)} (p={p}, q={q}) support fewer than {n_levels} levels; need p, q > N"
            )
        if activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        self.finest_dims = (H, W)
        self.n_levels = n_levels
        self.activation = activation
        self.levels: list[LevelBlock] = []
        self.metadata: dict = dict(metadata or {})

    # -- topology ---------------------------------------------------------

    def level_dims(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.n_levels:
            raise ShapeError(f"level {k} out of range for a {self.n_levels}-level model")
        s = self.n_levels - 1 - k
        return ((self.finest_dims[0] + 1) >> s) - 1, ((self.finest_dims[1] + 1) >> s) - 1

    @property
    def innermost_dims(self) -> tuple[int, int]:
        h, w = self.level_dims(0)
        return coarse_size(h), coarse_size(w)

    @property
    def top_level(self) -> int:
        return len(self.levels) - 1

    def group_counts(self) -> list[int]:
        return [len(b.groups) for b in self.levels]

    def parameters(self):
        """Yield ``(name, array)`` for every trainable array in a fixed order."""
        for m, blk in enumerate(self.levels):
            yield f"levels.{m}.deepen_conv.weight", blk.deepen_conv.weight
            yield f"levels.{m}.deepen_conv.bias", blk.deepen_conv.bias
            yield f"levels.{m}.deepen_deconv.weight", blk.deepen_deconv.weight
            yield f"levels.{m}.deepen_deconv.bias", blk.deepen_deconv.bias
            for j, g in enumerate(blk.groups):
                yield f"levels.{m}.groups.{j}.conv.weight", g.conv.weight
                yield f"levels.{m}.groups.{j}.conv.bias", g.conv.bias
                yield f"levels.{m}.groups.{j}.deconv.weight", g.deconv.weight
                yield f"levels.{m}.groups.{j}.deconv.bias", g.deconv.bias

    def count_params(self) -> int:
        return sum(20 + sum(19 * g.channels + 1 for g in blk.groups) for blk in self.levels)

    def encoding_size(self) -> int:
        h, w = self.innermost_dims
        return h * w + sum(g.channels * g.mask.active_count for blk in self.levels for g in blk.groups)

    # -- growth -----------------------------------------------------------

    def deepen(self, noise_scale: float, rng: np.random.Generator) -> LevelBlock:
        if len(self.levels) >= self.n_levels:
            raise GrowthError(f"all {self.n_levels} levels already grown")
        if noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        k = len(self.levels)
        cw = C0_STENCIL + rng.uniform(-noise_scale, noise_scale, size=(3, 3))
        dw = D0_STENCIL + rng.uniform(-noise_scale, noise_scale, size=(3, 3))
        blk = LevelBlock(
            index=k,
            dims=self.level_dims(k),
            deepen_conv=ConvKernel(cw[None, None], np.zeros(1)),
            deepen_deconv=DeconvKernel(dw[None, None], np.zeros(1)),
        )
        self.levels.append(blk)
        return blk

    def widen(self, mask: SpatialMask, channels: int, noise_scale: float, rng: np.random.Generator) -> WideningGroup:
        if not self.levels:
            raise GrowthError("widen requires at least one grown level")
        if channels < 1:
            raise ConfigError(f"group channel count must be >= 1, got {channels}")
        top = self.levels[-1]
        if mask.shape != top.coarse_dims:
            raise ShapeError(f"mask shape {mask.shape} does not match level {top.index} feature grid {top.coarse_dims}")
        cw = rng.uniform(-noise_scale, noise_scale, size=(channels, 1, 3, 3))
        dw = rng.uniform(-noise_scale, noise_scale, size=(channels, 1, 3, 3))
        grp = WideningGroup(
            conv=ConvKernel(cw, np.zeros(channels)),
            deconv=DeconvKernel(dw, np.zeros(1)),
            mask=mask,
            activation=self.activation,
        )
        top.groups.append(grp)
        return grp

    # -- forward / backward -----------------------------------------------

    def _check_input(self, x: np.ndarray, k: int) -> None:
        if not 0 <= k <= self.top_level:
            raise ShapeError(f"level {k} not grown (top level is {self.top_level})")
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != self.levels[k].dims:
            raise ShapeError(f"level-{k} input must be (T, 1, {self.levels[k].dims[0]}, {self.levels[k].dims[1]}), got {x.shape}")

    def _activate(self, z: np.ndarray) -> np.ndarray:
        return conv_ops.relu(z) if self.activation == "relu" else z

    # Each level runs as one convolution and one transposed convolution:
    # channel 0 is the deepening path, the remaining channels are the groups
    # in order. Gradients are split back per array.

    def _offsets(self, m: int) -> list[int]:
        offs = [1]
        for g in self.levels[m].groups:
            offs.append(offs[-1] + g.channels)
        return offs

    def _fused_conv(self, m: int) -> ConvKernel:
        blk = self.levels[m]
        return ConvKernel(np.concatenate([blk.deepen_conv.weight] + [g.conv.weight for g in blk.groups]),
                          np.concatenate([blk.deepen_conv.bias] + [g.conv.bias for g in blk.groups]))

    def _fused_deconv(self, m: int) -> DeconvKernel:
        blk = self.levels[m]
        bias = blk.deepen_deconv.bias.copy()
        for g in blk.groups:
            bias += g.deconv.bias
        return DeconvKernel(np.concatenate([blk.deepen_deconv.weight] + [g.deconv.weight for g in blk.groups]), bias)

    def _mask_stack(self, m: int) -> np.ndarray:
        """Boolean ``(sum g, Hc, Wc)`` mask over all group channels of level ``m``."""
        blk = self.levels[m]
        return np.concatenate([np.broadcast_to(g.mask.bits, (g.channels, *g.mask.shape)) for g in blk.groups])

    def _encode_dense(self, x: np.ndarray, k: int):
        xs: list[np.ndarray] = [None] * (k + 1)
        pre: list[np.ndarray | None] = [None] * (k + 1)
        feats: list[np.ndarray | None] = [None] * (k + 1)
        xs[k] = x
        innermost = None
        for m in range(k, -1, -1):
            out = conv_ops.conv2d_forward(xs[m], self._fused_conv(m))
            inner = np.ascontiguousarray(out[:, :1])
            if self.levels[m].groups:
                pre[m] = np.where(self._mask_stack(m), out[:, 1:], 0.0)
                feats[m] = self._activate(pre[m])
            if m > 0:
                xs[m - 1] = inner
            else:
                innermost = inner
        return xs, innermost, pre, feats

    def _decode_dense(self, innermost: np.ndarray, feats, k: int):
        ys, dec_in = [], []
        y = innermost
        for m in range(k + 1):
            inp = y if feats[m] is None else np.concatenate([y, feats[m]], axis=1)
            dec_in.append(inp)
            y = conv_ops.deconv2d_forward(inp, self._fused_deconv(m))
            ys.append(y)
        return ys, dec_in

    def forward(self, x: np.ndarray, k: int | None = None) -> np.ndarray:
        return self.forward_with_cache(x, k)[0]

    def forward_with_cache(self, x: np.ndarray, k: int | None = None):
        k = self.top_level if k is None else k
        self._check_input(x, k)
        xs, innermost, pre, feats = self._encode_dense(x, k)
        ys, dec_in = self._decode_dense(innermost, feats, k)
        return ys[-1], _Cache(k, xs, innermost, pre, feats, dec_in, ys)

    def backward(self, cache: _Cache, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar objective with respect to every parameter."""
        k = cache.k
        grads: dict[str, np.ndarray] = {}
        group_grads: list[np.ndarray | None] = [None] * (k + 1)
        gy = grad_out
        for m in range(k, -1, -1):
            blk = self.levels[m]
            offs = self._offsets(m)
            gin, gw, gb = conv_ops.deconv2d_backward(cache.dec_in[m], self._fused_deconv(m), gy)
            grads[f"levels.{m}.deepen_deconv.weight"] = gw[:1]
            grads[f"levels.{m}.deepen_deconv.bias"] = gb
            for j in range(len(blk.groups)):
                grads[f"levels.{m}.groups.{j}.deconv.weight"] = gw[offs[j]:offs[j + 1]]
                grads[f"levels.{m}.groups.{j}.deconv.bias"] = gb.copy()
            if blk.groups:
                active = self._mask_stack(m)
                if self.activation == "relu":
                    active = active & (cache.pre[m] > 0)
                group_grads[m] = np.where(active, gin[:, 1:], 0.0)
            gy = np.ascontiguousarray(gin[:, :1])
        # gy is now the gradient with respect to the innermost latent.
        for m in range(k + 1):
            blk = self.levels[m]
            offs = self._offsets(m)
            gout = gy if group_grads[m] is None else np.concatenate([gy, group_grads[m]], axis=1)
            gx, gw, gb = conv_ops.conv2d_backward(cache.xs[m], self._fused_conv(m), gout, need_input_grad=m < k)
            grads[f"levels.{m}.deepen_conv.weight"] = gw[:1]
            grads[f"levels.{m}.deepen_conv.bias"] = gb[:1]
            for j in range(len(blk.groups)):
                grads[f"levels.{m}.groups.{j}.conv.weight"] = gw[offs[j]:offs[j + 1]]
                grads[f"levels.{m}.groups.{j}.conv.bias"] = gb[offs[j]:offs[j + 1]]
            gy = gx
        return grads

    # -- sparse encoding --------------------------------------------------

    def encode(self, x: np.ndarray) -> Encoding:
        k = self.top_level
        self._check_input(x, k)
        _, innermost, _, feats = self._encode_dense(x, k)
        gf, layout = {}, {}
        for m in range(k + 1):
            offs = self._offsets(m)
            for j, g in enumerate(self.levels[m].groups):
                gf[(m, j)] = np.ascontiguousarray(feats[m][:, offs[j] - 1:offs[j + 1] - 1][:, :, g.mask.bits])
                layout[(m, j)] = g.mask
        return Encoding(innermost, gf, layout)

    def decode(self, enc: Encoding) -> np.ndarray:
        k = self.top_level
        if k < 0:
            raise TopologyError("model has no grown levels")
        expected = {(m, j): g.mask for m in range(k + 1) for j, g in enumerate(self.levels[m].groups)}
        if set(enc.layout) != set(expected) or set(enc.group_features) != set(expected):
            raise TopologyError(f"encoding keys {sorted(enc.layout)} do not match model groups {sorted(expected)}")
        if enc.innermost.shape[1:] != (1, *self.innermost_dims):
            raise TopologyError(f"innermost shape {enc.innermost.shape} does not match model {self.innermost_dims}")
        T = enc.n_snapshots
        feats: list[np.ndarray | None] = []
        for m in range(k + 1):
            blk = self.levels[m]
            if not blk.groups:
                feats.append(None)
                continue
            offs = self._offsets(m)
            dense = np.zeros((T, offs[-1] - 1, *blk.coarse_dims))
            for j, g in enumerate(blk.groups):
                if enc.layout[(m, j)] != g.mask:
                    raise TopologyError(f"mask layout of group {(m, j)} differs from the model's")
                vals = enc.group_features[(m, j)]
                if vals.shape != (T, g.channels, g.mask.active_count):
                    raise TopologyError(f"group {(m, j)} features have shape {vals.shape}")
                dense[:, offs[j] - 1:offs[j + 1] - 1][:, :, g.mask.bits] = vals
            feats.append(dense)
        ys, _ = self._decode_dense(enc.innermost, feats, k)
        return ys[-1]


def new_model(finest_dims, n_levels: int, activation: str = "linear", metadata=None) -> MrCaeModel:
    return MrCaeModel(finest_dims, n_levels, activation=activation, metadata=metadata)
