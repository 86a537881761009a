"""Cartesian multicoil measurement operator, frame binning and the hold-out split.

k-space arrays use the unshifted FFT layout: row ``r`` holds the phase-encode
frequency ``r`` for ``r < H/2`` and ``r - H`` otherwise. A line is one full row
(all kx samples). Stacked measurement vectors are ordered coil-major, then by
line (in acquisition order), then by kx.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import CoordinateGrid
from .tensorcore import DimensionError, fft2, ifft2

SENSITIVITY_FLOOR = 1e-12


@dataclass
class SensitivityMaps:
    maps: np.ndarray  # (C, H, W) complex

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=complex)
        if self.maps.ndim == 2:
            self.maps = self.maps[None]
        if self.maps.ndim != 3:
            raise DimensionError("sensitivity maps must have shape (C, H, W)")

    @property
    def C(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]

    def energy(self) -> np.ndarray:
        """Per-pixel sum of squared magnitudes over coils."""
        return np.sum(np.abs(self.maps) ** 2, axis=0)


def _as_rows(mask, H: int) -> np.ndarray:
    rows = np.atleast_1d(np.asarray(mask, dtype=np.int64))
    if rows.ndim != 1:
        raise DimensionError("mask must be a 1-D sequence of row indices")
    if rows.size and (rows.min() < 0 or rows.max() >= H):
        raise IndexError(f"mask rows must lie in [0, {H})")
    return rows


def apply_forward(img: np.ndarray, sens: SensitivityMaps, mask) -> np.ndarray:
    """Stacked measurements ``[M F S_1 x, ..., M F S_C x]`` for the given rows."""
    if img.shape != sens.shape:
        raise DimensionError(f"image {img.shape} does not match maps {sens.shape}")
    rows = _as_rows(mask, img.shape[0])
    ksp = fft2(sens.maps * img)
    return ksp[:, rows, :].ravel()


def apply_adjoint(meas: np.ndarray, sens: SensitivityMaps, mask) -> np.ndarray:
    """``sum_c conj(S_c) * ifft2(zero-filled k-space of coil c)``.

    Repeated rows in ``mask`` accumulate, which keeps this the exact adjoint
    of :func:`apply_forward`.
    """
    H, W = sens.shape
    rows = _as_rows(mask, H)
    meas = np.asarray(meas)
    if meas.size != sens.C * rows.size * W:
        raise DimensionError(
            f"measurement length {meas.size} != C*|mask|*W = {sens.C * rows.size * W}"
        )
    ksp = np.zeros((sens.C, H, W), dtype=complex)
    np.add.at(ksp, (slice(None), rows), meas.reshape(sens.C, rows.size, W))
    return np.sum(np.conj(sens.maps) * ifft2(ksp), axis=0)


def coil_combine(coil_images: np.ndarray, sens: SensitivityMaps) -> np.ndarray:
    """Normalized adjoint combine ``sum_c conj(S_c) x_c / sum_c |S_c|^2``."""
    denom = sens.energy()
    if np.min(denom) < SENSITIVITY_FLOOR:
        raise ValueError("coil-combination denominator below floor")
    return np.sum(np.conj(sens.maps) * coil_images, axis=0) / denom


def signed_frequency(row, H: int):
    """Row index -> signed phase-encode frequency in [-H/2, H/2)."""
    row = np.asarray(row)
    return np.where(row < (H + 1) // 2, row, row - H)


@dataclass
class LineSchedule:
    """Acquired lines in temporal order.

    ``index`` maps each line back to its position in the full acquisition,
    so subsets produced by :func:`extract_validation` stay traceable.
    """

    ky: np.ndarray
    t: np.ndarray
    H: int
    W: int
    dt_line: float
    index: np.ndarray | None = None

    def __post_init__(self):
        self.ky = np.asarray(self.ky, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.ky.shape != self.t.shape:
            raise DimensionError("ky and t must have equal length")
        if self.index is None:
            self.index = np.arange(self.ky.size)
        self.index = np.asarray(self.index, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.ky.size)

    def subset(self, positions) -> "LineSchedule":
        positions = np.asarray(positions, dtype=np.int64)
        return LineSchedule(
            self.ky[positions], self.t[positions], self.H, self.W, self.dt_line, self.index[positions]
        )


@dataclass
class Frame:
    lines: np.ndarray  # positions within the binned schedule
    rows: np.ndarray  # ky rows in acquisition order
    t: float  # midpoint of the first and last line timestamps


@dataclass
class FrameBinning:
    n_lines: int
    frames: list[Frame]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames])

    def flatten(self) -> np.ndarray:
        return np.concatenate([f.lines for f in self.frames])


def bin_lines(sched: LineSchedule, n_lines: int = 6) -> FrameBinning:
    """Group consecutive lines ``n_lines`` at a time; the last frame may be short."""
    if n_lines < 1:
        raise ValueError("n_lines must be >= 1")
    if len(sched) == 0:
        raise ValueError("cannot bin an empty schedule")
    frames = []
    for start in range(0, len(sched), n_lines):
        pos = np.arange(start, min(start + n_lines, len(sched)))
        t_mid = 0.5 * (sched.t[pos[0]] + sched.t[pos[-1]])
        frames.append(Frame(pos, sched.ky[pos].copy(), float(t_mid)))
    return FrameBinning(n_lines, frames)


def validation_count(n_total: int, fraction: float) -> int:
    """Round ``fraction * n_total`` to nearest, ties toward fewer lines."""
    return max(0, math.ceil(fraction * n_total - 0.5))


def extract_validation(sched: LineSchedule, fraction: float = 0.05, seed: int = 0):
    """Hold out a seeded uniform random subset of lines.

    Returns ``(train, validation)`` schedules; both keep original timestamps.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n_val = validation_count(len(sched), fraction)
    if n_val >= len(sched):
        raise ValueError("validation split leaves no training lines")
    rng = np.random.default_rng(seed)
    val_pos = np.sort(rng.choice(len(sched), size=n_val, replace=False))
    train_pos = np.setdiff1d(np.arange(len(sched)), val_pos)
    return sched.subset(train_pos), sched.subset(val_pos)


def assign_frames(t_val: np.ndarray, frame_times: np.ndarray) -> np.ndarray:
    """Nearest frame center for each time; ties go to the earlier frame."""
    t_val = np.atleast_1d(np.asarray(t_val, dtype=float))
    dist = np.abs(t_val[:, None] - frame_times[None, :])
    return np.argmin(dist, axis=1)  # argmin returns the first minimum


def predict_validation_line(img_k: np.ndarray, sens: SensitivityMaps, ky: int) -> np.ndarray:
    """Predicted line (all coils, all kx) for row ``ky`` from a reconstructed frame."""
    return apply_forward(img_k, sens, [ky])


@dataclass
class Measurements:
    """All measured lines of one acquisition plus the hold-out protocol state.

    ``lines[i]`` is the (C, W) k-space row acquired at ``schedule.t[i]``.
    ``val_mask`` flags lines held out for validation. ``ground_truth`` holds
    phantom images at the training frame centers when available.
    """

    schedule: LineSchedule
    lines: np.ndarray
    sens: SensitivityMaps
    fov: tuple[float, float]
    val_mask: np.ndarray
    n_lines: int = 6
    ground_truth: np.ndarray | None = None
    val_ground_truth: np.ndarray | None = None
    phantom: dict | None = None
    train: LineSchedule = field(init=False, repr=False)
    val: LineSchedule = field(init=False, repr=False)
    binning: FrameBinning = field(init=False, repr=False)
    val_frame: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.lines = np.asarray(self.lines, dtype=complex)
        self.val_mask = np.asarray(self.val_mask, dtype=bool)
        C, (H, W) = self.sens.C, self.sens.shape
        if self.lines.shape != (len(self.schedule), C, W):
            raise DimensionError(
                f"lines {self.lines.shape} != (N, C, W) = {(len(self.schedule), C, W)}"
            )
        if (H, W) != (self.schedule.H, self.schedule.W):
            raise DimensionError("schedule geometry does not match sensitivity maps")
        self.train = self.schedule.subset(np.flatnonzero(~self.val_mask))
        self.val = self.schedule.subset(np.flatnonzero(self.val_mask))
        self.binning = bin_lines(self.train, self.n_lines)
        self.val_frame = assign_frames(self.val.t, self.binning.times)

    @property
    def shape(self) -> tuple[int, int]:
        return self.sens.shape

    @property
    def grid(self) -> CoordinateGrid:
        if getattr(self, "_grid", None) is None:
            self._grid = CoordinateGrid(self.shape[0], self.shape[1], *self.fov)
        return self._grid

    @property
    def K(self) -> int:
        return len(self.binning)

    @property
    def frame_times(self) -> np.ndarray:
        return self.binning.times

    def frame(self, k: int) -> Frame:
        return self.binning.frames[k]

    def frame_measurements(self, k: int) -> np.ndarray:
        """Stacked y_k for frame k (coil-major, line order, kx)."""
        src = self.train.index[self.binning.frames[k].lines]
        return np.transpose(self.lines[src], (1, 0, 2)).ravel()

    def validation_lines(self) -> np.ndarray:
        """Measured validation lines, shape (V, C*W)."""
        return self.lines[self.val.index].reshape(len(self.val), -1)

    def validation_frames(self) -> np.ndarray:
        """Sorted distinct frame indices that own at least one validation line."""
        return np.unique(self.val_frame)

    def truncated(self, t_max: float) -> "Measurements":
        """Keep only lines acquired at or before ``t_max`` (ground truth dropped)."""
        keep = self.schedule.t <= t_max
        sched = LineSchedule(
            self.schedule.ky[keep], self.schedule.t[keep], self.schedule.H, self.schedule.W,
            self.schedule.dt_line,
        )
        return Measurements(
            sched, self.lines[keep], self.sens, self.fov, self.val_mask[keep], self.n_lines,
            phantom=self.phantom,
        )


def zero_filled_baseline(meas: Measurements, k: int) -> np.ndarray:
    """No-prior reference: adjoint of frame k's lines, normalized by sum |S_c|^2."""
    frame = meas.frame(k)
    img = apply_adjoint(meas.frame_measurements(k), meas.sens, frame.rows)
    return img / np.maximum(meas.sens.energy(), SENSITIVITY_FLOOR)
