"""Gradient training of a fixed topology and the progressive grow-and-train loop."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasets import DataPyramid
from .errors import ConfigError, TrainingError
from .masking import SpatialMask, compute_mask
from .model import ACTIVATIONS, MrCaeModel, new_model
from .objectives import LossValue, level_loss, level_loss_backward, prolong

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "level", "phase", "op", "epoch",
    "train_total", "train_mse", "train_max",
    "val_total", "val_global_total", "val_global_mse", "val_global_max",
    "params", "encoding_size", "wall_ms",
]


@dataclass
class TrainConfig:
    omega: float = 0.5
    # Absolute mask tolerance per level; None means eps_tau * Var(train data at that level).
    eps: list[float] | None = None
    eps_tau: float = 0.01
    max_epochs: int = 500
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    batch_size: int | None = None
    group_channels: int = 4
    max_groups: int = 3
    # "auto" (mask-driven, capped by max_groups) or explicit group counts per level.
    widen_schedule: str | list[int] = "auto"
    init_noise: float = 1e-3
    seed: int = 0
    activation: str = "linear"
    mask_mode: str = "adaptive"
    freeze_lower: bool = False
    early_stop_window: int = 10
    early_stop_tol: float = 1e-3

    def validate(self, n_levels: int | None = None) -> None:
        if self.early_stop_window < 0:
            raise ConfigError(f"early_stop_window must be >= 0 (0 disables), got {self.early_stop_window}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must lie in [0, 1], got {self.omega}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.group_channels < 1:
            raise ConfigError(f"group_channels must be >= 1, got {self.group_channels}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.mask_mode not in ("adaptive", "dense"):
            raise ConfigError(f"mask_mode must be 'adaptive' or 'dense', got {self.mask_mode!r}")
        if self.init_noise < 0:
            raise ConfigError("init_noise must be >= 0")
        if isinstance(self.widen_schedule, str):
            if self.widen_schedule != "auto":
                raise ConfigError(f"widen_schedule must be 'auto' or a list of counts, got {self.widen_schedule!r}")
        else:
            if any(int(c) < 0 for c in self.widen_schedule):
                raise ConfigError("group counts must be >= 0")
            if n_levels is not None and len(self.widen_schedule) != n_levels:
                raise ConfigError(f"schedule {list(self.widen_schedule)} has {len(self.widen_schedule)} entries for {n_levels} levels")
        if self.eps is not None:
            if n_levels is not None and len(self.eps) != n_levels:
                raise ConfigError(f"eps has {len(self.eps)} entries for {n_levels} levels")
            if any(e < 0 for e in self.eps):
                raise ConfigError("mask tolerances must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


# -- optimizer -------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(weights: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place, visiting arrays in ``weights`` order."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weight {name} {w.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- history ---------------------------------------------------------------


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    phases: list[dict] = field(default_factory=list)

    def extend(self, other: "TrainHistory") -> None:
        self.rows.extend(other.rows)
        self.phases.extend(other.phases)

    def to_csv(self, include_wall: bool = True) -> str:
        cols = CSV_COLUMNS if include_wall else CSV_COLUMNS[:-1]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({c: _fmt(r[c]) for c in cols})
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def level_end_rows(self) -> list[dict]:
        out = {}
        for r in self.rows:
            out[r["level"]] = r
        return [out[k] for k in sorted(out)]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def should_stop(losses: list[float], window: int = 10, tol: float = 1e-3) -> bool:
    """True when the relative decrease over the last ``window`` epochs is below ``tol``.

    Checked once per completed window, i.e. when ``len(losses) - 1`` is a
    positive multiple of ``window``. A window of 0 disables the rule.
    """
    n = len(losses) - 1
    if window <= 0 or n < window or n % window:
        return False
    old, new = losses[-1 - window], losses[-1]
    if old <= 0.0:
        return True
    return (old - new) / old < tol


# -- training ----------------------------------------------------------------


@dataclass
class LevelData:
    """Train and validation tensors at one level plus validation data at the finest level."""

    level: int
    train: np.ndarray
    val: np.ndarray
    val_finest: np.ndarray
    n_up: int


def level_data(pyramid: DataPyramid, k: int) -> LevelData:
    return LevelData(
        level=k,
        train=pyramid.get(k, "train"),
        val=pyramid.get(k, "val"),
        val_finest=pyramid.get(pyramid.n_levels - 1, "val"),
        n_up=pyramid.n_levels - 1 - k,
    )


def evaluate(model: MrCaeModel, data: LevelData, omega: float) -> tuple[LossValue, LossValue]:
    """Validation level loss and validation global loss, sharing one forward pass.

    The level-k validation tensor equals the finest validation data decimated
    ``n_up`` times, so its reconstruction is exactly the global metric's input.
    """
    recon = model.forward(data.val, data.level)
    return level_loss(data.val, recon, omega), level_loss(data.val_finest, prolong(recon, data.n_up), omega)


def _row(model, data, phase, op, epoch, train: LossValue | None, omega, t0) -> dict:
    val, glob = evaluate(model, data, omega)
    nan = float("nan")
    return {
        "level": data.level, "phase": phase, "op": op, "epoch": epoch,
        "train_total": train.total if train else nan,
        "train_mse": train.mse_part if train else nan,
        "train_max": train.max_part if train else nan,
        "val_total": val.total,
        "val_global_total": glob.total, "val_global_mse": glob.mse_part, "val_global_max": glob.max_part,
        "params": model.count_params(), "encoding_size": model.encoding_size(),
        "wall_ms": int((time.perf_counter() - t0) * 1000),
    }


def _trainable(model: MrCaeModel, k: int, freeze_lower: bool) -> dict[str, np.ndarray]:
    prefix = f"levels.{k}."
    return {n: a for n, a in model.parameters() if not freeze_lower or n.startswith(prefix)}


def train_phase(model: MrCaeModel, data: LevelData, cfg: TrainConfig, phase: int = 0,
                rng: np.random.Generator | None = None, t0: float | None = None) -> TrainHistory:
    """Run up to ``cfg.max_epochs`` epochs of Adam on the level loss, with early stopping."""
    cfg.validate()
    t0 = time.perf_counter() if t0 is None else t0
    k = data.level
    weights = _trainable(model, k, cfg.freeze_lower)
    state = AdamState()
    hist = TrainHistory()
    losses: list[float] = []
    T = data.train.shape[0]
    bs = T if cfg.batch_size is None else min(cfg.batch_size, T)
    for epoch in range(1, cfg.max_epochs + 1):
        if bs == T:
            batches = [None]
        else:
            if rng is None:
                raise ValueError("mini-batch training needs an rng")
            perm = rng.permutation(T)
            batches = [np.sort(perm[i:i + bs]) for i in range(0, T, bs)]
        totals = []
        for idx in batches:
            x = data.train if idx is None else np.ascontiguousarray(data.train[idx])
            recon, cache = model.forward_with_cache(x, k)
            loss = level_loss(x, recon, cfg.omega)
            if not math.isfinite(loss.total):
                raise TrainingError(
                    f"non-finite training loss at level {k}, phase {phase}, epoch {epoch}; "
                    f"learning rate {cfg.learning_rate} is probably too high"
                )
            totals.append(loss)
            grads = model.backward(cache, level_loss_backward(x, recon, cfg.omega))
            adam_step(weights, grads, state, cfg.learning_rate, *cfg.adam_betas, cfg.adam_epsilon)
        if len(totals) == 1:
            train = totals[0]
        else:
            train = LossValue(*(float(np.mean([getattr(l, f) for l in totals])) for f in ("total", "mse_part", "max_part")), cfg.omega)
        losses.append(train.total)
        hist.rows.append(_row(model, data, phase, "train", epoch, train, cfg.omega, t0))
        if should_stop(losses, cfg.early_stop_window, cfg.early_stop_tol):
            log.debug("level %d phase %d: early stop at epoch %d", k, phase, epoch)
            break
    return hist


def _mask_tolerance(cfg: TrainConfig, train: np.ndarray, k: int) -> float:
    if cfg.eps is not None:
        return float(cfg.eps[k])
    return cfg.eps_tau * float(np.var(train))


def progressive_train(pyramid: DataPyramid, cfg: TrainConfig, metadata=None, on_phase=None):
    """Grow and train a model level by level; returns ``(model, history)``.

    At each level: deepen and train, then widen and train while the residual
    mask is non-empty (``auto``) or until the scheduled group count is met.
    ``on_phase(model, history)`` is called after every phase.
    """
    N = pyramid.n_levels
    cfg.validate(N)
    H, W = pyramid.finest.shape[2:]
    model = new_model((H, W), N, activation=cfg.activation, metadata=metadata)
    ss = np.random.SeedSequence(cfg.seed)
    init_rng, batch_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    hist = TrainHistory()
    t0 = time.perf_counter()
    phase = 0
    for k in range(N):
        data = level_data(pyramid, k)
        model.deepen(cfg.init_noise, init_rng)
        hist.rows.append(_row(model, data, phase, "deepen", 0, None, cfg.omega, t0))
        hist.phases.append({"level": k, "phase": phase, "op": "deepen", "params": model.count_params(),
                            "encoding_size": model.encoding_size(), "active_count": None})
        hist.extend(train_phase(model, data, cfg, phase, batch_rng, t0))
        if on_phase:
            on_phase(model, hist)
        phase += 1

        eps_k = _mask_tolerance(cfg, data.train, k)
        target = cfg.max_groups if cfg.widen_schedule == "auto" else int(cfg.widen_schedule[k])
        for _ in range(target):
            recon = model.forward(data.train, k)
            mask = compute_mask(data.train, recon, eps_k)
            if cfg.widen_schedule == "auto" and mask.active_count == 0:
                break
            if cfg.mask_mode == "dense":
                mask = SpatialMask.ones(mask.shape)
            model.widen(mask, cfg.group_channels, cfg.init_noise, init_rng)
            hist.rows.append(_row(model, data, phase, "widen", 0, None, cfg.omega, t0))
            hist.phases.append({"level": k, "phase": phase, "op": "widen", "params": model.count_params(),
                                "encoding_size": model.encoding_size(), "active_count": mask.active_count,
                                "eps": eps_k})
            hist.extend(train_phase(model, data, cfg, phase, batch_rng, t0))
            if on_phase:
                on_phase(model, hist)
            phase += 1
        log.info("level %d done: groups=%d params=%d val_global=%.4g", k, len(model.levels[k].groups),
                 model.count_params(), hist.rows[-1]["val_global_total"])
    return model, hist
