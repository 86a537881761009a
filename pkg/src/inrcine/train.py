"""Losses, the stochastic epoch loop and SER-based early stopping.

Gradients of real losses with respect to complex arrays follow one
convention throughout: ``dL/dRe + 1j * dL/dIm``. With it, the gradient with
respect to an image is the adjoint operator applied to the gradient with
respect to the measurements.
"""
from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .kfmlp import KFMLPModel, forward_trajectory, normalize_kcoords, reconstruct_image
from .metrics import SerReport, compute_ser
from .model import FMLPModel, FourierMLP
from .mri import Measurements, apply_adjoint, apply_forward, predict_validation_line
from .tensorcore import AdamConfig, adam_step

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A loss or SER became NaN or infinite."""


@dataclass
class LossConfig:
    kind: str = "l2"  # l2 | hdr
    epsilon: float = 1e4
    lambda_denoiser: float = 0.0
    sigma_denoiser: float = 10.0
    denoiser_exponent: str = "linear"  # linear: exp(-d/2s^2), squared: exp(-d^2/2s^2)
    lambda_tv: float = 0.0

    def __post_init__(self):
        if self.kind not in ("l2", "hdr"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "hdr" and self.epsilon <= 0:
            raise ValueError("epsilon must be positive for the HDR loss")
        if self.lambda_denoiser < 0 or self.lambda_tv < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.sigma_denoiser <= 0:
            raise ValueError("sigma_denoiser must be positive")
        if self.denoiser_exponent not in ("linear", "squared"):
            raise ValueError("denoiser_exponent must be 'linear' or 'squared'")


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    patience: int = 200
    max_epochs: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


# ---------------------------------------------------------------- losses


def loss_l2_frame(yhat: np.ndarray, y: np.ndarray):
    """Squared l2 norm of the complex residual and its gradient 2 (yhat - y)."""
    if yhat.shape != y.shape:
        raise ValueError(f"length mismatch: {yhat.shape} vs {y.shape}")
    r = yhat - y
    return float(np.sum(r.real**2 + r.imag**2)), 2.0 * r


def loss_hdr(yhat: np.ndarray, y: np.ndarray, epsilon: float):
    """||(yhat - y) / (|sg(yhat)| + eps)||^2; the denominator is held constant."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if yhat.shape != y.shape:
        raise ValueError(f"length mismatch: {yhat.shape} vs {y.shape}")
    w = 1.0 / (np.abs(yhat) + epsilon)
    r = (yhat - y) * w
    return float(np.sum(r.real**2 + r.imag**2)), 2.0 * r * w


def denoiser_weights(kx, ky, sigma: float, exponent: str = "linear") -> np.ndarray:
    d = np.sqrt(np.asarray(kx) ** 2 + np.asarray(ky) ** 2)
    if exponent == "squared":
        d = d * d
    return np.exp(-d / (2.0 * sigma**2))


def loss_denoiser(yhat, kx, ky, sigma: float, epsilon: float, exponent: str = "linear"):
    """HDR distance between yhat and its radially damped copy (copy detached)."""
    target = denoiser_weights(kx, ky, sigma, exponent) * yhat
    return loss_hdr(yhat, target, epsilon)


def loss_temporal_tv(img: np.ndarray, cached: np.ndarray, k: int):
    """l1 distance (real and imaginary parts) to the cached neighboring frames."""
    K = cached.shape[0]
    if not 0 <= k < K:
        raise IndexError(f"frame {k} out of range for {K} frames")
    loss = 0.0
    grad = np.zeros_like(img, dtype=complex)
    for n in (k - 1, k + 1):
        if 0 <= n < K:
            d = img - cached[n]
            loss += float(np.sum(np.abs(d.real)) + np.sum(np.abs(d.imag)))
            grad += np.sign(d.real) + 1j * np.sign(d.imag)
    return loss, grad


# ---------------------------------------------------------- model dispatch


def render_frame(model: FourierMLP, meas: Measurements, t: float) -> np.ndarray:
    """Reconstructed complex image at time ``t`` for either model kind."""
    if isinstance(model, KFMLPModel):
        return reconstruct_image(model, t, meas.sens)
    return model.forward_grid(meas.grid, t)


def validation_predictions(model: FourierMLP, meas: Measurements) -> np.ndarray:
    """Predicted validation lines, shape (V, C*W), in validation order."""
    V = len(meas.val)
    C, W = meas.sens.C, meas.shape[1]
    out = np.empty((V, C * W), dtype=complex)
    times = meas.frame_times
    for k in meas.validation_frames():
        img = render_frame(model, meas, float(times[k]))
        for v in np.flatnonzero(meas.val_frame == k):
            out[v] = predict_validation_line(img, meas.sens, int(meas.val.ky[v]))
    return out


def evaluate_ser(model: FourierMLP, meas: Measurements, subset=None) -> SerReport:
    """Hold-out SER; ``subset`` optionally restricts to some validation lines."""
    pred = validation_predictions(model, meas)
    ref = meas.validation_lines()
    if subset is not None:
        pred, ref = pred[subset], ref[subset]
    return compute_ser(pred, ref)


def render_frames(model: FourierMLP, meas: Measurements, times=None) -> np.ndarray:
    times = meas.frame_times if times is None else times
    return np.stack([render_frame(model, meas, float(t)) for t in times])


# ----------------------------------------------------------------- training


@dataclass
class TrainState:
    epoch: int = 0
    best_ser_db: float = -math.inf
    best_params: list | None = None
    best_epoch: int = 0
    epochs_since_best: int = 0
    patience: int = 200
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    cached_recons: np.ndarray | None = None


@dataclass
class FitResult:
    best_params: list
    best_ser_db: float
    best_epoch: int
    history: list[tuple[int, float, float, float]]
    state: TrainState


class _FrameData:
    """Per-frame measurement vectors and k-coordinates, computed once."""

    def __init__(self, meas: Measurements):
        H, W = meas.shape
        C = meas.sens.C
        self.y = [meas.frame_measurements(k) for k in range(meas.K)]
        self.kxy = []
        for frame in meas.binning.frames:
            rr = np.repeat(frame.rows, W)
            cc = np.tile(np.arange(W), frame.rows.size)
            kx, ky = normalize_kcoords(rr, cc, H, W)
            self.kxy.append((np.tile(kx, C), np.tile(ky, C)))


def _data_term(yhat, y, kxy, loss_cfg: LossConfig):
    if loss_cfg.kind == "hdr":
        loss, g = loss_hdr(yhat, y, loss_cfg.epsilon)
    else:
        loss, g = loss_l2_frame(yhat, y)
    if loss_cfg.lambda_denoiser > 0:
        r, gr = loss_denoiser(yhat, kxy[0], kxy[1], loss_cfg.sigma_denoiser,
                              loss_cfg.epsilon, loss_cfg.denoiser_exponent)
        loss += loss_cfg.lambda_denoiser * r
        g = g + loss_cfg.lambda_denoiser * gr
    return loss, g


def _check_finite(loss: float, state: TrainState) -> None:
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite loss at epoch {state.epoch + 1}")


def _fmlp_step(model: FMLPModel, meas, data, k, loss_cfg, state) -> float:
    frame = meas.frame(k)
    img, cache = model.forward_grid(meas.grid, frame.t, return_cache=True)
    yhat = apply_forward(img, meas.sens, frame.rows)
    loss, g = _data_term(yhat, data.y[k], data.kxy[k], loss_cfg)
    dimg = apply_adjoint(g, meas.sens, frame.rows)
    if loss_cfg.lambda_tv > 0 and state.cached_recons is not None:
        tv, gtv = loss_temporal_tv(img, state.cached_recons, k)
        loss += loss_cfg.lambda_tv * tv
        dimg = dimg + loss_cfg.lambda_tv * gtv
        state.cached_recons[k] = img
    _check_finite(loss, state)
    model.backward_grid(cache, dimg)
    return loss


def _kfmlp_step(model: KFMLPModel, meas, data, k, loss_cfg, state) -> float:
    yhat, cache = forward_trajectory(model, meas, k, return_cache=True)
    loss, g = _data_term(yhat, data.y[k], data.kxy[k], loss_cfg)
    _check_finite(loss, state)
    n = meas.frame(k).rows.size
    model.backward_rows(cache, g.reshape(meas.sens.C, n, meas.shape[1]))
    return loss


def train_epoch(model: FourierMLP, meas: Measurements, cfg: TrainConfig, state: TrainState,
                adam: AdamConfig | None = None, data: _FrameData | None = None) -> float:
    """K single-frame Adam steps with frames drawn uniformly with replacement.

    Returns the mean per-step total loss.
    """
    K = meas.K
    if K == 0:
        raise ValueError("dataset has no training frames")
    adam = cfg.adam if adam is None else adam
    data = _FrameData(meas) if data is None else data
    if isinstance(model, KFMLPModel):
        if cfg.loss.lambda_tv > 0:
            raise ValueError("temporal TV is defined for image-domain models only")
        step = _kfmlp_step
    else:
        step = _fmlp_step
    params = model.parameters()
    total = 0.0
    for _ in range(K):
        k = int(state.rng.integers(K))
        loss = step(model, meas, data, k, cfg.loss, state)
        adam_step(params, adam)
        total += loss
    state.epoch += 1
    return total / K


def full_objective(model: FourierMLP, meas: Measurements) -> float:
    """(1/K) sum_k ||A_k f(t_k) - y_k||^2 evaluated at the current parameters."""
    total = 0.0
    for k in range(meas.K):
        frame = meas.frame(k)
        if isinstance(model, KFMLPModel):
            yhat = forward_trajectory(model, meas, k)
        else:
            yhat = apply_forward(model.forward_grid(meas.grid, frame.t), meas.sens, frame.rows)
        total += loss_l2_frame(yhat, meas.frame_measurements(k))[0]
    return total / meas.K


def fit(model: FourierMLP, meas: Measurements, cfg: TrainConfig, deterministic: bool = True,
        callback=None) -> FitResult:
    """Train until ``patience`` epochs pass without a strictly higher SER.

    The model is left holding the best parameters. History rows are
    ``(epoch, train_loss, val_ser_db, wallclock_s)``; wall-clock is recorded
    as 0.0 in deterministic mode so reruns are byte-identical.
    """
    if len(meas.val) == 0:
        raise ValueError("fit needs validation lines")
    state = TrainState(patience=cfg.patience, rng=np.random.default_rng(cfg.seed))
    adam = copy.deepcopy(cfg.adam)
    adam.step_count = 0
    data = _FrameData(meas)
    history = []
    t0 = time.perf_counter()
    for _ in range(cfg.max_epochs):
        loss = train_epoch(model, meas, cfg, state, adam, data)
        if cfg.loss.lambda_tv > 0 and state.cached_recons is None:
            state.cached_recons = render_frames(model, meas)
        rep = evaluate_ser(model, meas)
        if math.isnan(rep.ser_db):
            raise NumericalError(f"SER is NaN at epoch {state.epoch}")
        wall = 0.0 if deterministic else time.perf_counter() - t0
        history.append((state.epoch, loss, rep.ser_db, wall))
        if rep.ser_db > state.best_ser_db:
            state.best_ser_db = rep.ser_db
            state.best_params = model.state()
            state.best_epoch = state.epoch
            state.epochs_since_best = 0
        else:
            state.epochs_since_best += 1
        if callback is not None:
            callback(state, history[-1])
        log.debug("epoch %d loss %.6g ser %.4f dB", state.epoch, loss, rep.ser_db)
        if state.epochs_since_best >= cfg.patience:
            break
    model.load_state(state.best_params)
    return FitResult(state.best_params, state.best_ser_db, state.best_epoch, history, state)

