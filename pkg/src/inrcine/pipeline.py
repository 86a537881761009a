"""High-level steps shared by the CLI and the acceptance tests."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, RunConfig
from .kfmlp import KFMLPModel
from .metrics import compute_ser, mean_ssim
from .model import FMLPModel, FourierMLP
from .mri import Measurements, predict_validation_line, zero_filled_baseline
from .phantom import make_schedule, make_sensitivities, synthesize_dataset
from .train import FitResult, evaluate_ser, fit, render_frames


def synthesize(cfg: RunConfig) -> Measurements:
    pc = cfg.phantom_config()
    s = cfg["schedule"]
    d = cfg["dataset"]
    sched = make_schedule(
        pc.H, pc.W, s["coverage"], s["n_total_lines"], s["lines_per_sweep"], s["dt_line"], s["seed"]
    )
    sens = make_sensitivities(d["n_coils"], pc.H, pc.W, seed=d["sens_seed"])
    return synthesize_dataset(pc, sched, sens, d["val_fraction"], d["val_seed"], d["n_lines"])


def build_model(cfg: RunConfig, meas: Measurements) -> FourierMLP:
    m = cfg["model"]
    ff = cfg.fourier_config()
    mlp = cfg.mlp_config()
    if m["kind"] == "kfmlp":
        H, W = meas.shape
        return KFMLPModel(ff, mlp, meas.sens.C, H, W, seed=m["seed"])
    return FMLPModel(ff, mlp, seed=m["seed"], origin=(m["origin_x"], m["origin_y"]))


def check_geometry(cfg: RunConfig, meas: Measurements) -> None:
    p = cfg["phantom"]
    if (p["H"], p["W"]) != meas.shape:
        raise ConfigError(
            f"config geometry {p['H']}x{p['W']} does not match dataset {meas.shape[0]}x{meas.shape[1]}"
        )


def train(cfg: RunConfig, meas: Measurements, callback=None) -> tuple[FourierMLP, FitResult]:
    check_geometry(cfg, meas)
    model = build_model(cfg, meas)
    result = fit(model, meas, cfg.train_config(), deterministic=cfg["run"]["deterministic"],
                 callback=callback)
    return model, result


def baseline_metrics(meas: Measurements) -> dict:
    """SER and SSIM of the zero-filled adjoint reconstruction."""
    recon = np.stack([zero_filled_baseline(meas, k) for k in range(meas.K)])
    pred = [
        predict_validation_line(recon[k], meas.sens, int(meas.val.ky[v]))
        for v, k in enumerate(meas.val_frame)
    ]
    out = {"ser_db": compute_ser(pred, meas.validation_lines()).ser_db}
    if meas.ground_truth is not None:
        out["ssim_mean"] = mean_ssim(recon, meas.ground_truth)[0]
    return out


def evaluate(model: FourierMLP, meas: Measurements) -> dict:
    """SER on the hold-out lines plus SSIM when ground truth is present."""
    rep = evaluate_ser(model, meas)
    out = {"kind": model.kind, "ser_db": rep.ser_db, "n_val_lines": rep.n_lines,
           "signal_energy": rep.signal_energy, "error_energy": rep.error_energy}
    if meas.ground_truth is not None:
        mean, per = mean_ssim(render_frames(model, meas), meas.ground_truth)
        out["ssim_mean"] = mean
        out["ssim_per_frame"] = per
    return out


@dataclass
class SweepRow:
    axes: dict
    best_ser_db: float
    best_epoch: int
    wall_s: float


def sweep_points(axes: dict[str, list]) -> list[dict]:
    if not axes:
        raise ConfigError("sweep has no axes")
    names = list(axes)
    points = [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]
    if not points:
        raise ConfigError("sweep product is empty")
    return points


def run_sweep(cfg: RunConfig, meas: Measurements, axes: dict[str, list]) -> list[SweepRow]:
    """One independent run per point of the Cartesian product of ``axes``."""
    rows = []
    for point in sweep_points(axes):
        run_cfg = cfg.with_overrides(point)
        t0 = time.perf_counter()
        _, result = train(run_cfg, meas)
        rows.append(SweepRow(point, result.best_ser_db, result.best_epoch, time.perf_counter() - t0))
    return rows


def parse_sweep_axes(text: str) -> dict[str, list]:
    """``[sweep]`` section lines ``section.key = v1 v2 ...`` -> axes dict."""
    import configparser

    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    if not cp.has_section("sweep"):
        raise ConfigError("sweep config needs a [sweep] section")
    axes = {}
    for key, value in cp["sweep"].items():
        vals = value.replace(",", " ").split()
        if not vals:
            raise ConfigError(f"sweep axis {key!r} has no values")
        axes[key] = vals
    return axes


def finite_or_none(x: float):
    return x if math.isfinite(x) else None
