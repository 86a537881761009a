"""Command-line entry point: ``inrcine {synth,train,eval,render,sweep}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(a NaN or infinite loss or SER).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .fileformats import (
    FormatError,
    atomic_write,
    export_magnitudes,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    sha256_file,
)
from .kfmlp import KFMLPModel
from .pipeline import evaluate, finite_or_none, parse_sweep_axes, run_sweep, synthesize, train
from .train import NumericalError, render_frames

log = logging.getLogger("inrcine")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

METRICS_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["kind", "ser_db", "n_val_lines", "recorded_ser_db", "ser_matches_record"],
    "properties": {
        "kind": {"enum": ["fmlp", "kfmlp"]},
        "ser_db": {"type": ["number", "null"]},
        "n_val_lines": {"type": "integer", "minimum": 1},
        "signal_energy": {"type": "number", "minimum": 0},
        "error_energy": {"type": "number", "minimum": 0},
        "recorded_ser_db": {"type": ["number", "null"]},
        "ser_matches_record": {"type": "boolean"},
        "ssim_mean": {"type": "number"},
        "ssim_per_frame": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ helpers


def _write_text(path: Path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _write_manifest(out: Path, verb: str, cfg: RunConfig | None, files: list[dict], extra=None):
    manifest = {
        "tool": "inrcine",
        "version": __version__,
        "verb": verb,
        "files": files,
    }
    if cfg is not None:
        manifest["config"] = cfg.values
        manifest["seeds"] = {
            "phantom": cfg["phantom"]["seed"],
            "schedule": cfg["schedule"]["seed"],
            "sensitivities": cfg["dataset"]["sens_seed"],
            "validation": cfg["dataset"]["val_seed"],
            "model": cfg["model"]["seed"],
            "fourier": cfg["fourier"]["seed"],
            "train": cfg["train"]["seed"],
        }
    if extra:
        manifest.update(extra)
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _file_entry(path: Path) -> dict:
    return {"file": path.name, "sha256": sha256_file(path)}


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.deterministic is not None:
        overrides["run.deterministic"] = args.deterministic
    if args.threads is not None:
        overrides["run.threads"] = args.threads
    if args.out is not None:
        overrides["run.out"] = args.out
    return cfg.with_overrides(overrides) if overrides else cfg


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = args.out or (cfg["run"]["out"] if cfg is not None else None)
    if out is None:
        raise UsageError("--out is required")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name} is required for '{args.verb}'")


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_ser_db", "wallclock_s"])
    for epoch, loss, ser, wall in history:
        w.writerow([epoch, repr(float(loss)), repr(float(ser)), repr(float(wall))])
    return buf.getvalue()


def _check_compatible(model, meas) -> None:
    if isinstance(model, KFMLPModel):
        if (model.C, model.H, model.W) != (meas.sens.C, *meas.shape):
            raise UsageError(
                f"checkpoint geometry C={model.C} {model.H}x{model.W} does not match the dataset"
            )


# ------------------------------------------------------------------- verbs


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    meas = synthesize(cfg)
    ds = out / "dataset.inrd"
    save_dataset(ds, meas)
    _write_text(out / "config.ini", cfg.to_ini())
    files = [_file_entry(ds), _file_entry(out / "config.ini")]
    images = export_magnitudes(out / "ground_truth", meas.ground_truth, "frame")
    files += [dict(r, file=f"ground_truth/{r['file']}") for r in images]
    _write_manifest(out, "synth", cfg, files, {"n_frames": meas.K, "n_val_lines": len(meas.val)})
    print(f"wrote {ds} ({meas.K} frames, {len(meas.val)} validation lines)")
    return EXIT_OK


def cmd_train(args) -> int:
    _require(args, "dataset")
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    meas = load_dataset(args.dataset)
    _write_text(out / "config.ini", cfg.to_ini())

    def progress(state, row):
        log.info("epoch %d loss %.6g val SER %.3f dB", *row[:3])

    with _thread_limit(cfg["run"]["threads"]):
        model, result = train(cfg, meas, callback=progress)
    ckpt = out / "checkpoint.inrc"
    meta = {"best_ser_db": result.best_ser_db, "best_epoch": result.best_epoch,
            "dataset_sha256": sha256_file(args.dataset)}
    save_checkpoint(ckpt, model, meta)
    _write_text(out / "history.csv", _history_csv(result.history))
    files = [_file_entry(out / n) for n in ("checkpoint.inrc", "history.csv", "config.ini")]
    _write_manifest(out, "train", cfg, files, {"best_ser_db": result.best_ser_db,
                                               "best_epoch": result.best_epoch,
                                               "dataset": str(args.dataset)})
    print(f"best SER {result.best_ser_db:.4f} dB at epoch {result.best_epoch}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "dataset", "checkpoint")
    out = _out_dir(args)
    meas = load_dataset(args.dataset)
    model, meta = load_checkpoint(args.checkpoint)
    _check_compatible(model, meas)
    with _thread_limit(args.threads):
        metrics = evaluate(model, meas)
    recorded = meta.get("best_ser_db")
    metrics["recorded_ser_db"] = recorded
    metrics["ser_matches_record"] = bool(
        recorded is not None
        and (metrics["ser_db"] == recorded or abs(metrics["ser_db"] - recorded) <= 1e-9)
    )
    metrics["ser_db"] = finite_or_none(metrics["ser_db"])
    path = out / "metrics.json"
    _write_text(path, json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "eval", None, [_file_entry(path)],
                    {"checkpoint": str(args.checkpoint), "dataset": str(args.dataset)})
    if not metrics["ser_matches_record"] and recorded is not None:
        log.warning("recomputed SER %.12g differs from recorded %.12g", metrics["ser_db"], recorded)
    print(json.dumps({k: v for k, v in metrics.items() if k != "ssim_per_frame"}, sort_keys=True))
    return EXIT_OK


def render_times(meas, times=None, frames=None, rate=None) -> np.ndarray:
    """Resolve the render request to an array of times in seconds."""
    centers = meas.frame_times
    if times:
        return np.asarray(times, dtype=float)
    if frames:
        lo, _, hi = frames.partition(":")
        lo = int(lo) if lo else 0
        hi = int(hi) if hi else meas.K
        return centers[lo:hi]
    if rate:
        # evenly spaced over the span of the frame centers, rate * K samples
        n = int(round(rate * meas.K))
        return np.linspace(centers[0], centers[-1], n)
    return centers


def cmd_render(args) -> int:
    _require(args, "dataset", "checkpoint")
    out = _out_dir(args)
    meas = load_dataset(args.dataset)
    model, _ = load_checkpoint(args.checkpoint)
    _check_compatible(model, meas)
    times = render_times(meas, args.times, args.frames, args.rate)
    t_lo, t_hi = meas.schedule.t.min(), meas.schedule.t.max()
    if np.any((times < t_lo) | (times > t_hi)):
        log.warning("some render times lie outside the acquisition window [%g, %g] s", t_lo, t_hi)
    with _thread_limit(args.threads):
        images = render_frames(model, meas, times)
    rows = export_magnitudes(out, images, "render", png=args.png)
    _write_manifest(out, "render", None, rows, {"times": [float(t) for t in times],
                                                "checkpoint": str(args.checkpoint)})
    print(f"rendered {len(times)} frames to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    _require(args, "dataset", "sweep")
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    axes = parse_sweep_axes(Path(args.sweep).read_text())
    meas = load_dataset(args.dataset)
    with _thread_limit(cfg["run"]["threads"]):
        rows = run_sweep(cfg, meas, axes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(axes)
    w.writerow(names + ["best_ser_db", "epochs_to_best", "wall_s"])
    for r in rows:
        w.writerow([r.axes[n] for n in names] + [repr(r.best_ser_db), r.best_epoch,
                                                 f"{r.wall_s:.3f}"])
    _write_text(out / "sweep.csv", buf.getvalue())
    _write_text(out / "config.ini", cfg.to_ini())
    files = [_file_entry(out / "sweep.csv"), _file_entry(out / "config.ini")]
    _write_manifest(out, "sweep", cfg, files, {"axes": axes})
    print(f"wrote {len(rows)} sweep rows to {out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--dataset", help="dataset container (.inrd)")
    common.add_argument("--checkpoint", help="model checkpoint (.inrc)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="record zero wall-clock so reruns are byte-identical")
    common.add_argument("--threads", type=int, help="BLAS thread limit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="inrcine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("synth", parents=[common], help="synthesize a phantom dataset")
    sub.add_parser("train", parents=[common], help="fit a model to a dataset")
    sub.add_parser("eval", parents=[common], help="hold-out SER and SSIM of a checkpoint")
    r = sub.add_parser("render", parents=[common], help="render frames at arbitrary times")
    r.add_argument("--times", type=float, nargs="+", help="times in seconds")
    r.add_argument("--frames", help="frame-center range 'start:stop'")
    r.add_argument("--rate", type=float, help="multiple of the training frame count")
    r.add_argument("--png", action="store_true", help="also write 8-bit PNG previews")
    s = sub.add_parser("sweep", parents=[common], help="Cartesian-product ablation sweep")
    s.add_argument("--sweep", help="INI file with a [sweep] section of axes")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, FormatError, UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
