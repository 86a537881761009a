"""Analytic moving phantom, synthetic coil maps and per-line k-space synthesis.

The scene is a sum of complex ellipses whose edges
ramp smoothly over about one pixel. Ellipses flagged
``cardiac`` scale about their own center with an asymmetric contraction
waveform; the whole scene translates vertically with a sinusoidal
respiratory motion. A fixed lab-frame phase ramp makes the image complex.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import CoordinateGrid
from .mri import (
    LineSchedule,
    Measurements,
    SensitivityMaps,
    extract_validation,
)
from .tensorcore import fft2


@dataclass
class Ellipse:
    center: tuple[float, float]  # (x, y) meters
    axes: tuple[float, float]  # semi-axes (a along x, b along y) meters
    amplitude: complex
    cardiac: bool = False

    def to_dict(self) -> dict:
        a = complex(self.amplitude)
        return {
            "center": list(self.center),
            "axes": list(self.axes),
            "amplitude": [a.real, a.imag],
            "cardiac": self.cardiac,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipse":
        re, im = d["amplitude"]
        return cls(tuple(d["center"]), tuple(d["axes"]), complex(re, im), bool(d["cardiac"]))


def cardiac_preset(fov_x: float, fov_y: float) -> list[Ellipse]:
    """Torso-like scene: body, lungs, liver, spine, myocardium and blood pool."""
    fx, fy = fov_x, fov_y
    return [
        Ellipse((0.0, 0.0), (0.40 * fx, 0.30 * fy), 0.45 + 0.0j),
        Ellipse((-0.20 * fx, -0.06 * fy), (0.11 * fx, 0.14 * fy), -0.30 + 0.0j),
        Ellipse((0.20 * fx, -0.06 * fy), (0.10 * fx, 0.13 * fy), -0.30 + 0.0j),
        Ellipse((-0.14 * fx, 0.17 * fy), (0.17 * fx, 0.07 * fy), 0.20 + 0.05j),
        Ellipse((0.0, 0.24 * fy), (0.05 * fx, 0.04 * fy), 0.40 + 0.0j),
        Ellipse((0.03 * fx, 0.0), (0.095 * fx, 0.085 * fy), 0.25 + 0.0j, cardiac=True),
        Ellipse((0.03 * fx, 0.0), (0.06 * fx, 0.055 * fy), 0.55 + 0.1j, cardiac=True),
    ]


# patch (in FOV fractions) covered only by the body ellipse at every motion state
STATIC_PATCH_CENTER = (0.17, 0.16)


@dataclass
class PhantomConfig:
    H: int = 64
    W: int = 64
    fov_x: float = 0.3
    fov_y: float = 0.3
    ellipses: list[Ellipse] | None = None
    cardiac_freq: float = 1.0
    cardiac_amp: float = 0.15
    contraction_fraction: float = 0.35
    resp_freq: float = 0.25
    resp_amp: float = 0.006
    phase_x: float = 1.0  # radians across the full FOV
    phase_y: float = 0.6
    edge_width_px: float = 1.5
    noise_snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.ellipses is None:
            self.ellipses = cardiac_preset(self.fov_x, self.fov_y)
        if not 0.0 <= self.cardiac_amp < 1.0:
            raise ValueError("cardiac_amp must lie in [0, 1)")
        if not 0.0 < self.contraction_fraction < 1.0:
            raise ValueError("contraction_fraction must lie in (0, 1)")
        for e in self.ellipses:
            scale = 1.0 + (self.cardiac_amp if e.cardiac else 0.0)
            if (
                abs(e.center[0]) + e.axes[0] * scale > self.fov_x / 2
                or abs(e.center[1]) + e.axes[1] * scale + abs(self.resp_amp) > self.fov_y / 2
            ):
                raise ValueError(f"ellipse at {e.center} leaves the field of view")

    @property
    def softness(self) -> float:
        """Edge transition width in meters."""
        return self.edge_width_px * min(self.fov_x / self.W, self.fov_y / self.H)

    def grid(self) -> CoordinateGrid:
        return CoordinateGrid(self.H, self.W, self.fov_x, self.fov_y)

    def static_patch(self, half_size: int = 2) -> tuple[slice, slice]:
        """Pixel slices of a small background patch with no moving structure."""
        cx, cy = STATIC_PATCH_CENTER
        i = self.H // 2 + int(round(cy * self.H))
        j = self.W // 2 + int(round(cx * self.W))
        return slice(i - half_size, i + half_size + 1), slice(j - half_size, j + half_size + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ellipses"] = [e.to_dict() for e in self.ellipses]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        d = dict(d)
        d["ellipses"] = [Ellipse.from_dict(e) for e in d["ellipses"]]
        return cls(**d)


def cardiac_waveform(t, freq: float, contraction_fraction: float = 0.35):
    """Contraction state in [-1, 0]: fast raised-cosine descent, slow recovery."""
    phase = np.mod(np.asarray(t, dtype=float) * freq, 1.0)
    c = contraction_fraction
    rise = 0.5 * (1.0 - np.cos(np.pi * phase / c))
    fall = 0.5 * (1.0 + np.cos(np.pi * (phase - c) / (1.0 - c)))
    return -np.where(phase < c, rise, fall)


def _smooth_edge(z):
    """Cubic smoothstep from 0 (z <= -1/2) to 1 (z >= 1/2)."""
    s = np.clip(z + 0.5, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def render_image(cfg: PhantomConfig, t: float) -> np.ndarray:
    """Complex H x W image of the scene at time ``t`` (seconds)."""
    grid = cfg.grid()
    x = grid.coords[:, 0]
    y = grid.coords[:, 1]
    shift = cfg.resp_amp * math.sin(2.0 * math.pi * cfg.resp_freq * t)
    scale = 1.0 + cfg.cardiac_amp * float(cardiac_waveform(t, cfg.cardiac_freq, cfg.contraction_fraction))
    soft = cfg.softness
    img = np.zeros(x.shape, dtype=complex)
    for e in cfg.ellipses:
        s = scale if e.cardiac else 1.0
        a, b = e.axes[0] * s, e.axes[1] * s
        u = (x - e.center[0]) / a
        v = (y - e.center[1] - shift) / b
        r = np.sqrt(u * u + v * v)
        img += e.amplitude * _smooth_edge((1.0 - r) * min(a, b) / soft)
    phase = cfg.phase_x * x / cfg.fov_x + cfg.phase_y * y / cfg.fov_y
    img *= np.exp(1j * phase)
    return img.reshape(cfg.H, cfg.W)


def make_sensitivities(C: int, H: int, W: int, seed: int = 0, floor: float = 0.1) -> SensitivityMaps:
    """Smooth complex Gaussian coil maps centered around the FOV border.

    Maps are rescaled when needed so that sum_c |S_c|^2 >= ``floor``
    everywhere in the field of view.
    """
    if C < 1:
        raise ValueError("need at least one coil")
    rng = np.random.default_rng(seed)
    v = (np.arange(H) - H // 2) / H
    u = (np.arange(W) - W // 2) / W
    vv, uu = np.meshgrid(v, u, indexing="ij")
    maps = np.empty((C, H, W), dtype=complex)
    for c in range(C):
        theta = 2.0 * np.pi * c / C + rng.uniform(-0.2, 0.2)
        cu, cv = 0.55 * np.cos(theta), 0.55 * np.sin(theta)
        width = 0.45 * rng.uniform(0.9, 1.1)
        mag = np.exp(-((uu - cu) ** 2 + (vv - cv) ** 2) / (2.0 * width**2))
        k = rng.uniform(0.5, 1.5, size=2)
        phase = rng.uniform(0, 2 * np.pi) + 2.0 * (k[0] * uu + k[1] * vv)
        maps[c] = mag * np.exp(1j * phase)
    sens = SensitivityMaps(maps)
    low = float(np.min(sens.energy()))
    if low < floor:
        sens.maps *= math.sqrt(floor / low) * (1.0 + 1e-9)
    return sens


def partial_fourier_rows(H: int, coverage: float = 0.625) -> np.ndarray:
    """Rows of the sampled band, ordered from the highest signed ky downward."""
    if not 0.0 < coverage <= 1.0:
        raise ValueError("coverage must lie in (0, 1]")
    n_band = max(1, int(round(coverage * H)))
    top = (H + 1) // 2 - 1  # highest positive frequency
    freqs = top - np.arange(n_band)
    return np.mod(freqs, H)


def make_schedule(
    H: int,
    W: int,
    coverage: float = 0.625,
    n_total_lines: int = 1350,
    lines_per_sweep: int = 6,
    dt_line: float = 4.0 / 1350,
    seed: int = 0,
) -> LineSchedule:
    """Sequential line schedule: each sweep visits a random subset of the
    partial-Fourier band in descending signed-ky order."""
    band = partial_fourier_rows(H, coverage)
    if lines_per_sweep > band.size:
        raise ValueError(
            f"band of {band.size} rows is smaller than {lines_per_sweep} lines per sweep"
        )
    if lines_per_sweep < 1 or n_total_lines < 1:
        raise ValueError("need at least one line per sweep and in total")
    rng = np.random.default_rng(seed)
    rows = []
    while len(rows) < n_total_lines:
        pick = rng.choice(band.size, size=lines_per_sweep, replace=False)
        # band is already ordered by descending signed ky
        rows.extend(band[np.sort(pick)].tolist())
    ky = np.array(rows[:n_total_lines], dtype=np.int64)
    t = np.arange(n_total_lines) * dt_line
    return LineSchedule(ky, t, H, W, dt_line)


def _noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0x5EED])


def synthesize_lines(cfg: PhantomConfig, sched: LineSchedule, sens: SensitivityMaps) -> np.ndarray:
    """Noise-free (N, C, W) lines, each from the scene at its own timestamp."""
    out = np.empty((len(sched), sens.C, cfg.W), dtype=complex)
    for i, (row, t) in enumerate(zip(sched.ky, sched.t)):
        ksp = fft2(sens.maps * render_image(cfg, float(t)))
        out[i] = ksp[:, row, :]
    return out


def add_noise(lines: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Complex white Gaussian noise at the given mean-power SNR."""
    p_signal = np.mean(np.abs(lines) ** 2)
    p_noise = p_signal / 10.0 ** (snr_db / 10.0)
    rng = _noise_rng(seed)
    noise = rng.standard_normal(lines.shape) + 1j * rng.standard_normal(lines.shape)
    return lines + noise * math.sqrt(p_noise / 2.0)


def render_series(cfg: PhantomConfig, times) -> np.ndarray:
    return np.stack([render_image(cfg, float(t)) for t in times]) if len(times) else np.zeros(
        (0, cfg.H, cfg.W), dtype=complex
    )


def synthesize_dataset(
    cfg: PhantomConfig,
    sched: LineSchedule,
    sens: SensitivityMaps,
    val_fraction: float = 0.05,
    val_seed: int = 0,
    n_lines: int = 6,
) -> Measurements:
    """Per-line synthesis, optional noise, hold-out split and ground truth."""
    if (sched.H, sched.W) != (cfg.H, cfg.W) or sens.shape != (cfg.H, cfg.W):
        raise ValueError("schedule / sensitivity geometry does not match the phantom")
    lines = synthesize_lines(cfg, sched, sens)
    if cfg.noise_snr_db is not None:
        lines = add_noise(lines, cfg.noise_snr_db, cfg.seed)
    _, val = extract_validation(sched, val_fraction, val_seed)
    val_mask = np.zeros(len(sched), dtype=bool)
    val_mask[val.index] = True
    meas = Measurements(sched, lines, sens, (cfg.fov_x, cfg.fov_y), val_mask, n_lines,
                        phantom=cfg.to_dict())
    meas.ground_truth = render_series(cfg, meas.frame_times)
    meas.val_ground_truth = render_series(cfg, meas.val.t)
    return meas


def ground_truth_at(meas: Measurements, times) -> np.ndarray | None:
    """Re-render ground truth at arbitrary times if the phantom config is known."""
    if meas.phantom is None:
        return None
    return render_series(PhantomConfig.from_dict(meas.phantom), times)

