"""Architecture-matched scaling comparison between model variants."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import DataPyramid
from .errors import ConfigError, TrainingError
from .plots import line_chart
from .trainer import TrainConfig, progressive_train

log = logging.getLogger(__name__)

KINDS = ("pr", "dense", "pr_relu", "dense_relu")
BENCH_COLUMNS = ["variant", "level", "phase", "params", "encoding_size",
                 "val_global_total", "val_global_mse", "val_global_max"]


@dataclass(frozen=True)
class VariantSpec:
    kind: str
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown variant {self.kind!r}; expected one of {KINDS}")

    def resolved(self, schedule=None) -> TrainConfig:
        """The shared config with this kind's overrides applied."""
        changes = {
            "mask_mode": "dense" if self.kind.startswith("dense") else "adaptive",
            "activation": "relu" if self.kind.endswith("relu") else "linear",
        }
        if schedule is not None:
            changes["widen_schedule"] = list(schedule)
        return dataclasses.replace(self.config, **changes)


@dataclass
class BenchCurve:
    variant: str
    points: list[dict] = field(default_factory=list)
    group_counts: list[int] = field(default_factory=list)
    error: str | None = None
    seconds: float = 0.0
    model: object = field(default=None, repr=False)


def run_benchmark(pyramid: DataPyramid, variants: list[VariantSpec]) -> list[BenchCurve]:
    """Train every variant through one shared growth schedule, snapshotting after each phase.

    With an ``auto`` schedule the group counts realised by the first variant
    are imposed on the rest, so every curve has the same topology at every
    checkpoint. All variants start from the same seed: the dense and ReLU
    variants then differ from the first only by their overrides.
    """
    if not variants:
        raise ConfigError("no variants given")
    schedule = None
    if not isinstance(variants[0].config.widen_schedule, str):
        schedule = list(variants[0].config.widen_schedule)
    curves = []
    for spec in variants:
        curve = BenchCurve(spec.kind)
        cfg = spec.resolved(schedule)

        def snapshot(model, hist, curve=curve):
            r = hist.rows[-1]
            curve.points.append({
                "variant": curve.variant, "level": r["level"], "phase": r["phase"],
                "params": r["params"], "encoding_size": r["encoding_size"],
                "val_global_total": r["val_global_total"], "val_global_mse": r["val_global_mse"],
                "val_global_max": r["val_global_max"],
            })
            curve.group_counts = model.group_counts()

        t0 = time.perf_counter()
        try:
            curve.model, _ = progressive_train(pyramid, cfg, metadata={"variant": spec.kind}, on_phase=snapshot)
        except TrainingError as exc:
            curve.error = str(exc)
            log.error("variant %s aborted: %s", spec.kind, exc)
        curve.seconds = time.perf_counter() - t0
        if schedule is None and curve.error is None:
            schedule = list(curve.group_counts)
        curves.append(curve)
    return curves


def bench_csv(curves: list[BenchCurve]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for c in curves:
        for p in c.points:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in p.items()})
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def emit_report(curves: list[BenchCurve], out_dir) -> list[Path]:
    """Write ``bench.csv`` and the two log-log SVG charts; returns the written paths."""
    if not curves:
        raise ConfigError("no curves to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "bench.csv"
    _write(path, bench_csv(curves))
    written.append(path)
    for xkey, fname, xlabel in (("params", "error_vs_params.svg", "number of parameters"),
                                ("encoding_size", "error_vs_encoding.svg", "encoding size")):
        series = {c.variant: [(float(p[xkey]), p["val_global_total"]) for p in c.points] for c in curves}
        path = out / fname
        _write(path, line_chart(series, f"validation error vs {xlabel}", xlabel, "validation global loss",
                                logx=True, logy=True))
        written.append(path)
    failed = {c.variant: c.error for c in curves if c.error}
    if failed:
        path = out / "bench_errors.json"
        _write(path, json.dumps(failed, indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written
