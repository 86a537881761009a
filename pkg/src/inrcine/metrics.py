"""Hold-out signal-to-error ratio and SSIM."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class SerReport:
    ser_db: float
    signal_energy: float
    error_energy: float
    n_lines: int
    exact: bool = False  # True when the error energy is zero and ser_db is +inf

    def to_dict(self) -> dict:
        return asdict(self)


def compute_ser(predicted, measured) -> SerReport:
    """10 log10(sum_v ||y_v||^2 / sum_v ||yhat_v - y_v||^2) over all lines."""
    pred = [np.asarray(p) for p in predicted]
    meas = [np.asarray(m) for m in measured]
    if len(pred) != len(meas):
        raise ValueError("predicted and measured line counts differ")
    if not meas:
        raise ValueError("need at least one validation line")
    signal = 0.0
    error = 0.0
    for p, m in zip(pred, meas):
        if p.shape != m.shape:
            raise ValueError(f"line shapes differ: {p.shape} vs {m.shape}")
        signal += float(np.sum(np.abs(m) ** 2))
        error += float(np.sum(np.abs(p - m) ** 2))
    if error == 0.0:
        return SerReport(math.inf, signal, error, len(meas), exact=True)
    if signal == 0.0:
        return SerReport(-math.inf, signal, error, len(meas))
    return SerReport(10.0 * math.log10(signal / error), signal, error, len(meas))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    patches = sliding_window_view(img, window.shape)
    return np.einsum("ijkl,kl->ij", patches, window)


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float) -> np.ndarray:
    """Local SSIM over every fully contained 11x11 Gaussian window."""
    window = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    var_a = _filter_valid(a * a, window) - mu_a * mu_a
    var_b = _filter_valid(b * b, window) - mu_b * mu_b
    cov = _filter_valid(a * b, window) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def compute_ssim(recon: np.ndarray, truth: np.ndarray, data_range: float | None = None) -> float:
    """Mean SSIM of two real (magnitude) images.

    ``data_range`` defaults to ``max(truth)``.
    """
    recon = np.asarray(recon, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if recon.shape != truth.shape:
        raise ValueError("images must have equal shapes")
    if min(recon.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    L = float(np.max(truth)) if data_range is None else float(data_range)
    if L <= 0.0:
        raise ValueError("zero dynamic range")
    return float(np.mean(ssim_map(recon, truth, L)))


def mean_ssim(recons: np.ndarray, truths: np.ndarray) -> tuple[float, list[float]]:
    """Per-frame magnitude SSIM and its mean."""
    per = [compute_ssim(np.abs(r), np.abs(g)) for r, g in zip(recons, truths)]
    return float(np.mean(per)), per
