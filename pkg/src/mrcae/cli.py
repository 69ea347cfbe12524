"""Command-line interface: ``mrcae {gen,train,eval,bench,report}``.

Settings resolve as built-in defaults, then a JSON ``--config`` file, then
explicit flags. The resolved settings are echoed next to every artifact and
embedded in checkpoints, so any output can be regenerated from them.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, datasets
from .bench import KINDS, VariantSpec, emit_report, run_benchmark
from .errors import ConfigError, MrcaeError, ShapeError
from .objectives import level_loss, prolong, restrict
from .plots import line_chart
from .tensor_core import reduce_time_mean_sq
from .trainer import TrainConfig, progressive_train

log = logging.getLogger("mrcae")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

RUN_KEYS = {"data", "levels", "out_dir", "variants", "example", "nx", "ny", "nt", "out", "checkpoint", "split"}
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--data", help="MRCAE-DATA input file")
    g.add_argument("--levels", type=int, help="number of pyramid levels N (default 3)")
    sched = g.add_mutually_exclusive_group()
    sched.add_argument("--groups", dest="widen_schedule", type=_int_list, help="explicit group counts per level, e.g. 1,2,3")
    sched.add_argument("--auto-widen", dest="widen_schedule", action="store_const", const="auto",
                       help="widen while the residual mask is non-empty, up to --max-groups")
    g.add_argument("--max-groups", type=int)
    g.add_argument("--eps-tau", type=float, help="mask tolerance as a fraction of the training-data variance")
    g.add_argument("--eps", type=_float_list, help="absolute mask tolerance per level, comma separated")
    g.add_argument("--omega", type=float, help="weight of the MSE term in the loss")
    g.add_argument("--seed", type=int)
    g.add_argument("--lr", dest="learning_rate", type=float)
    g.add_argument("--epochs", dest="max_epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--channels", dest="group_channels", type=int, help="channels per widening group")
    g.add_argument("--init-noise", type=float)
    g.add_argument("--activation", choices=["linear", "relu"])
    g.add_argument("--dense", dest="mask_mode", action="store_const", const="dense", help="use all-ones masks")
    g.add_argument("--freeze-lower", action="store_const", const=True)
    g.add_argument("--early-stop-window", type=int)
    g.add_argument("--early-stop-tol", type=float)
    g.add_argument("--out-dir", help="output directory (default: current directory)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with settings; flags override it")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="mrcae", description="Multi-resolution convolutional autoencoder")
    parser.add_argument("--version", action="version", version=f"mrcae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic data file")
    p.add_argument("--example", choices=sorted(datasets.GENERATORS))
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--nt", type=int)
    p.add_argument("--out", help="output path")

    p = sub.add_parser("train", parents=[common], help="grow and train a model")
    _add_training_flags(p)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint against a data file")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", choices=["train", "val", "test", "all"])
    p.add_argument("--omega", type=float)
    p.add_argument("--seed", type=int, help="split seed (default: the one stored in the checkpoint)")
    p.add_argument("--dump-recon", type=Path, help="directory for reconstructions and residual fields")

    p = sub.add_parser("bench", parents=[common], help="compare variants on a shared growth schedule")
    _add_training_flags(p)
    p.add_argument("--variants", help=f"comma-separated subset of {','.join(KINDS)}")

    p = sub.add_parser("report", parents=[common], help="plot a training metrics CSV")
    p.add_argument("--metrics", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


# -- configuration ---------------------------------------------------------


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    unknown = set(d) - RUN_KEYS - TRAIN_KEYS
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {sorted(unknown)}")
    return d


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, the config file and flags that were actually given."""
    out = dict(defaults)
    out.update(_load_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("config", "verbose", "command") or value is None:
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def _train_config(run: dict, n_levels: int) -> TrainConfig:
    cfg = TrainConfig.from_dict({k: v for k, v in run.items() if k in TRAIN_KEYS})
    cfg.validate(n_levels)
    return cfg


def _config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _require(run: dict, *keys: str) -> None:
    missing = [k for k in keys if run.get(k) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_pyramid(run: dict, cfg: TrainConfig):
    path = Path(run["data"])
    raw = path.read_bytes()
    data = datasets.parse_data(raw)
    prov = {"data": path.name, "data_sha256": hashlib.sha256(raw).hexdigest()}
    return datasets.build_pyramid(data, int(run["levels"]), seed=cfg.seed, provenance=prov)


# -- commands --------------------------------------------------------------


def cmd_gen(args) -> int:
    run = resolve(args, {"example": None, "nx": 127, "ny": 127, "nt": 500, "out": None})
    _require(run, "example", "out")
    if run["example"] not in datasets.GENERATORS:
        raise UsageError(f"unknown example {run['example']!r}; choose from {sorted(datasets.GENERATORS)}")
    try:
        data = datasets.GENERATORS[run["example"]](run["nx"], run["ny"], run["nt"])
    except ShapeError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(run["out"])
    crc = datasets.write_data(data, out)
    params = datasets.DRIFTING_DEFAULTS if run["example"] == "modes2-drift" else datasets.TWO_MODES_DEFAULTS
    meta = {k: run[k] for k in ("example", "nx", "ny", "nt")}
    _write_json(out.with_name(out.name + ".json"), {**meta, "params": params, "crc32": crc})
    T, _, H, W = data.shape
    print(f"wrote {out}: T={T} H={H} W={W} crc32={crc:08x}")
    return EXIT_OK


TRAIN_DEFAULTS = {"levels": 3, "out_dir": ".", **TrainConfig().to_dict()}


def cmd_train(args) -> int:
    run = resolve(args, TRAIN_DEFAULTS)
    _require(run, "data")
    cfg = _train_config(run, int(run["levels"]))
    pyramid = _load_pyramid(run, cfg)
    out = Path(run["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    # the output location is not part of the experiment, so it stays out of the checkpoint
    echo = {k: v for k, v in {**run, **cfg.to_dict()}.items() if k != "out_dir"}
    metadata = {"config": echo, "config_hash": _config_hash(echo), **pyramid.provenance}
    model, hist = progressive_train(pyramid, cfg, metadata=metadata)
    checkpoint.save_checkpoint(model, out / "model.ckpt")
    hist.write_csv(out / "metrics.csv")
    _write_json(out / "config.json", metadata)
    last = hist.rows[-1]
    print(f"groups per level {model.group_counts()}, params {model.count_params()}, "
          f"encoding size {model.encoding_size()}, val global loss {last['val_global_total']!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = resolve(args, {"split": "val", "dump_recon": None})
    _require(run, "checkpoint", "data")
    model = checkpoint.load_checkpoint(run["checkpoint"])
    stored = model.metadata.get("config", {}) if isinstance(model.metadata, dict) else {}
    omega = run.get("omega", stored.get("omega", 0.5))
    seed = run.get("seed", stored.get("seed", 0))
    data = datasets.read_data(run["data"])
    if data.shape[2:] != tuple(model.finest_dims):
        raise ShapeError(f"data dims {tuple(data.shape[2:])} do not match model dims {tuple(model.finest_dims)}")
    if run["split"] != "all":
        data = np.ascontiguousarray(data[datasets.split_indices(data.shape[0], seed)[run["split"]]])
    if data.shape[0] == 0:
        raise ShapeError(f"split {run['split']!r} is empty")
    dump = Path(run["dump_recon"]) if run.get("dump_recon") else None
    if dump:
        dump.mkdir(parents=True, exist_ok=True)
    print(f"split={run['split']} snapshots={data.shape[0]} omega={omega!r}")
    N = model.n_levels
    for k in range(model.top_level + 1):
        recon = prolong(model.forward(restrict(data, N - 1 - k), k), N - 1 - k)
        loss = level_loss(data, recon, omega)
        print(f"level {k}: total={loss.total!r} mse={loss.mse_part!r} max={loss.max_part!r}")
        if dump:
            datasets.write_data(recon, dump / f"recon_level{k}.mrd")
            datasets.write_data(reduce_time_mean_sq(data, recon)[None, None], dump / f"residual_level{k}.mrd")
    return EXIT_OK


def cmd_bench(args) -> int:
    run = resolve(args, {**TRAIN_DEFAULTS, "variants": "pr,dense"})
    _require(run, "data")
    kinds = [s.strip() for s in str(run["variants"]).split(",") if s.strip()]
    if not kinds:
        raise UsageError("--variants needs at least one variant")
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise UsageError(f"unknown variant(s) {bad}; choose from {list(KINDS)}")
    cfg = _train_config(run, int(run["levels"]))
    pyramid = _load_pyramid(run, cfg)
    curves = run_benchmark(pyramid, [VariantSpec(k, cfg) for k in kinds])
    out = Path(run["out_dir"])
    paths = emit_report(curves, out)
    echo = {**run, **cfg.to_dict()}
    _write_json(out / "config.json", {"config": echo, "config_hash": _config_hash(echo), **pyramid.provenance})
    for c in curves:
        status = f"failed: {c.error}" if c.error else f"final val global loss {c.points[-1]['val_global_total']!r}"
        last = c.points[-1] if c.points else {"params": 0, "encoding_size": 0}
        print(f"{c.variant}: {len(c.points)} checkpoints, params {last['params']}, "
              f"encoding size {last['encoding_size']}, {status}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_RUNTIME if all(c.error for c in curves) else EXIT_OK


def cmd_report(args) -> int:
    try:
        with open(args.metrics, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {args.metrics}: {exc}") from exc
    if not rows or "phase" not in rows[0] or "val_global_total" not in rows[0]:
        raise UsageError(f"{args.metrics} is not a training metrics file")
    end_of_phase = {}
    for r in rows:
        end_of_phase[int(r["phase"])] = r
    phases = sorted(end_of_phase)
    series = {
        "validation global loss": [(p, float(end_of_phase[p]["val_global_total"])) for p in phases],
        "validation level loss": [(p, float(end_of_phase[p]["val_total"])) for p in phases],
    }
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "training_curve.svg"
    path.write_text(line_chart(series, "validation error by growth phase", "phase", "loss", logx=False, logy=True))
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"mrcae {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MrcaeError, OSError, ValueError) as exc:
        print(f"mrcae {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
