"""k-space-domain Fourier-feature MLP (KFMLP).

The network maps normalized (kx, ky, t) to 2C reals, i.e. the complex
k-space value of every coil from one forward pass. Output column ``2c`` is
the real part of coil ``c`` and ``2c + 1`` its imaginary part.
"""
from __future__ import annotations

import numpy as np

from .model import FourierFeatureConfig, FourierMLP, MLPConfig, embed_points
from .mri import Measurements, SensitivityMaps, coil_combine, signed_frequency
from .tensorcore import ifft2


def normalize_kcoords(row, col, H: int, W: int):
    """Grid indices -> (kx, ky) in [-pi, pi) with DC at 0."""
    row = np.asarray(row)
    col = np.asarray(col)
    if np.any((row < 0) | (row >= H)) or np.any((col < 0) | (col >= W)):
        raise IndexError("k-space index out of range")
    ky = 2.0 * np.pi * signed_frequency(row, H) / H
    kx = 2.0 * np.pi * signed_frequency(col, W) / W
    return kx, ky


def kcoords_to_index(kx, ky, H: int, W: int):
    """Inverse of :func:`normalize_kcoords`."""
    fy = np.rint(np.asarray(ky) * H / (2.0 * np.pi)).astype(np.int64)
    fx = np.rint(np.asarray(kx) * W / (2.0 * np.pi)).astype(np.int64)
    return np.mod(fy, H), np.mod(fx, W)


class KFMLPModel(FourierMLP):
    kind = "kfmlp"

    def __init__(self, ff: FourierFeatureConfig, mlp: MLPConfig, n_coils: int, H: int, W: int,
                 seed: int = 0):
        super().__init__(ff, mlp, n_out=2 * n_coils, seed=seed)
        self.C = n_coils
        self.H = H
        self.W = W
        self._full = None

    def row_coords(self, rows) -> np.ndarray:
        """(kx, ky) for every kx sample of the given rows, line-major order."""
        rows = np.asarray(rows, dtype=np.int64)
        rr = np.repeat(rows, self.W)
        cc = np.tile(np.arange(self.W), rows.size)
        kx, ky = normalize_kcoords(rr, cc, self.H, self.W)
        return np.stack([kx, ky], axis=1)

    def full_coords(self) -> np.ndarray:
        if self._full is None:
            self._full = self.row_coords(np.arange(self.H))
        return self._full

    def _to_complex(self, out: np.ndarray, n_rows: int) -> np.ndarray:
        z = out[:, 0::2] + 1j * out[:, 1::2]  # (n_rows*W, C)
        return np.transpose(z.reshape(n_rows, self.W, self.C), (2, 0, 1))  # (C, n_rows, W)

    def forward_rows(self, rows, t: float, return_cache: bool = False):
        """Predicted k-space of all coils on ``rows`` at time ``t``, shape (C, n, W)."""
        coords = self.row_coords(rows)
        out, cache = self.forward_features(embed_points(coords, t, self.ff))
        ksp = self._to_complex(out, len(np.atleast_1d(rows)))
        if return_cache:
            return ksp, cache
        return ksp

    def backward_rows(self, cache, dksp: np.ndarray) -> None:
        """Backpropagate a (C, n, W) complex gradient (dRe + i dIm)."""
        C, n, W = dksp.shape
        d = np.transpose(dksp, (1, 2, 0)).reshape(n * W, C)
        dout = np.empty((n * W, 2 * C))
        dout[:, 0::2] = d.real
        dout[:, 1::2] = d.imag
        self.backward_features(cache, dout)

    def forward_full(self, t: float) -> np.ndarray:
        """All-coil k-space on the full Cartesian grid, shape (C, H, W)."""
        out, _ = self.forward_features(embed_points(self.full_coords(), t, self.ff))
        return self._to_complex(out, self.H)


def forward_trajectory(model: KFMLPModel, meas: Measurements, k: int, return_cache: bool = False):
    """Stacked predictions along frame k's measured lines at the frame time.

    Ordering matches :meth:`Measurements.frame_measurements`.
    """
    frame = meas.frame(k)
    if frame.rows.size == 0:
        raise ValueError("frame has no lines")
    ksp, cache = model.forward_rows(frame.rows, frame.t, return_cache=True)
    if return_cache:
        return ksp.ravel(), cache
    return ksp.ravel()


def reconstruct_image(model: KFMLPModel, t: float, sens: SensitivityMaps) -> np.ndarray:
    """Full-grid k-space -> per-coil ifft2 -> normalized adjoint coil combine."""
    return coil_combine(ifft2(model.forward_full(t)), sens)
