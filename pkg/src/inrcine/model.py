"""Fourier-feature MLP (FMLP) mapping (x, y, t) to a complex intensity.

The same embedding + MLP machinery is reused by :mod:`inrcine.kfmlp`, where
the spatial inputs are normalized k-space coordinates instead of meters.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .tensorcore import (
    Parameter,
    layernorm_backward,
    layernorm_forward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
)

SEPARATE = "separate"
JOINT = "joint"


@dataclass
class FourierFeatureConfig:
    """Coordinate scales and the seed of the fixed Gaussian wave matrices.

    The matrices are drawn row-major from ``numpy.random.default_rng(seed)``
    (PCG64): first ``B`` (n_spatial x 2), then ``b`` (n_temporal), then
    ``B_joint`` (n_joint x 3). Drawing all three regardless of ``mode`` keeps
    each matrix independent of the mode.
    """

    s_x: float = 33.0 / 1.43
    s_y: float = 33.0
    s_t: float = 5.3
    n_spatial: int = 256
    n_temporal: int = 64
    n_joint: int = 320
    mode: str = SEPARATE
    seed: int = 0
    B: np.ndarray = field(init=False, repr=False, compare=False)
    b: np.ndarray = field(init=False, repr=False, compare=False)
    B_joint: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in (SEPARATE, JOINT):
            raise ValueError(f"unknown embedding mode {self.mode!r}")
        rng = np.random.default_rng(self.seed)
        self.B = rng.standard_normal((self.n_spatial, 2))
        self.b = rng.standard_normal(self.n_temporal)
        self.B_joint = rng.standard_normal((self.n_joint, 3))

    @property
    def n_features(self) -> int:
        if self.mode == SEPARATE:
            return 2 * self.n_spatial + 2 * self.n_temporal
        return 2 * self.n_joint

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("B", "b", "B_joint"):
            d.pop(name, None)
        return d


@dataclass
class MLPConfig:
    n_hidden: int = 7
    width: int = 512
    sigma_linear: float = 0.01
    s_out: float = 1.0

    def __post_init__(self):
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")
        if self.width < 2:
            raise ValueError("width must be >= 2")
        if self.sigma_linear < 0:
            raise ValueError("sigma_linear must be nonnegative")


@dataclass
class CoordinateGrid:
    """Pixel-center coordinates in meters, origin at the FOV center.

    Row ``i`` maps to ``y = (i - H/2) * fov_y / H``, column ``j`` to
    ``x = (j - W/2) * fov_x / W``; ``coords`` holds (x, y) in row-major order.
    """

    H: int
    W: int
    fov_x: float
    fov_y: float

    def __post_init__(self):
        ys = (np.arange(self.H) - self.H // 2) * self.dy
        xs = (np.arange(self.W) - self.W // 2) * self.dx
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        self.coords = np.stack([xx.ravel(), yy.ravel()], axis=1)

    @property
    def dx(self) -> float:
        return self.fov_x / self.W

    @property
    def dy(self) -> float:
        return self.fov_y / self.H

    def shifted(self, offset_x: float = 0.0, offset_y: float = 0.0) -> "CoordinateGrid":
        g = CoordinateGrid(self.H, self.W, self.fov_x, self.fov_y)
        g.coords = g.coords + np.array([offset_x, offset_y])
        return g


def embed_separate(x, y, t, ff: FourierFeatureConfig) -> np.ndarray:
    """[sin(B s_xy), cos(B s_xy), sin(b s_t t), cos(b s_t t)] for scalar inputs."""
    if ff.mode != SEPARATE:
        raise ValueError("embed_separate requires mode='separate'")
    return embed_points(np.array([[x, y]], dtype=float), np.array([t], dtype=float), ff)[0]


def embed_joint(x, y, t, ff: FourierFeatureConfig) -> np.ndarray:
    """[sin(B_joint s_xyt), cos(B_joint s_xyt)] for scalar inputs."""
    if ff.mode != JOINT:
        raise ValueError("embed_joint requires mode='joint'")
    return embed_points(np.array([[x, y]], dtype=float), np.array([t], dtype=float), ff)[0]


def _spatial_phase(xy: np.ndarray, ff: FourierFeatureConfig) -> np.ndarray:
    scaled = xy * np.array([ff.s_x, ff.s_y])
    if ff.mode == SEPARATE:
        return scaled @ ff.B.T
    return scaled @ ff.B_joint[:, :2].T


def embed_points(xy: np.ndarray, t, ff: FourierFeatureConfig) -> np.ndarray:
    """Embed ``N`` points; ``t`` is a scalar or an array of length ``N``."""
    xy = np.asarray(xy, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), (xy.shape[0],))
    sp = _spatial_phase(xy, ff)
    if ff.mode == SEPARATE:
        tp = np.multiply.outer(t * ff.s_t, ff.b)
        return np.concatenate([np.sin(sp), np.cos(sp), np.sin(tp), np.cos(tp)], axis=1)
    phase = sp + np.multiply.outer(t * ff.s_t, ff.B_joint[:, 2])
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


def embedding_jacobian(x, y, t, ff: FourierFeatureConfig) -> np.ndarray:
    """d(embedding)/d(x, y, t) at one point, shape (n_features, 3)."""
    scales = np.array([ff.s_x, ff.s_y, ff.s_t])
    if ff.mode == SEPARATE:
        sp = ff.B @ (np.array([x, y]) * scales[:2])
        tp = ff.b * ff.s_t * t
        jac_s = np.zeros((ff.n_spatial, 3))
        jac_s[:, :2] = ff.B * scales[:2]
        jac_t = np.zeros((ff.n_temporal, 3))
        jac_t[:, 2] = ff.b * ff.s_t
        return np.concatenate(
            [
                np.cos(sp)[:, None] * jac_s,
                -np.sin(sp)[:, None] * jac_s,
                np.cos(tp)[:, None] * jac_t,
                -np.sin(tp)[:, None] * jac_t,
            ]
        )
    phase = ff.B_joint @ (np.array([x, y, t]) * scales)
    jac = ff.B_joint * scales
    return np.concatenate([np.cos(phase)[:, None] * jac, -np.sin(phase)[:, None] * jac])


class FourierMLP:
    """Embedding -> (linear, ReLU, layernorm) x n_hidden -> linear -> x s_out."""

    def __init__(self, ff: FourierFeatureConfig, mlp: MLPConfig, n_out: int, seed: int = 0):
        self.ff = ff
        self.mlp = mlp
        self.n_out = n_out
        self.seed = seed
        rng = np.random.default_rng(seed)
        sizes = [ff.n_features] + [mlp.width] * mlp.n_hidden + [n_out]
        self.layers: list[tuple[Parameter, Parameter]] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = Parameter(rng.standard_normal((fan_out, fan_in)) * mlp.sigma_linear)
            b = Parameter(np.zeros((1, fan_out)))
            self.layers.append((W, b))
        self.n_evaluations = 0

    def parameters(self) -> list[Parameter]:
        return [p for pair in self.layers for p in pair]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]

    def load_state(self, values: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise ValueError("state has the wrong number of tensors")
        for p, v in zip(params, values):
            if p.value.shape != v.shape:
                raise ValueError(f"tensor shape {v.shape} != {p.value.shape}")
            p.value[...] = v

    def forward_features(self, feats: np.ndarray, shared: np.ndarray | None = None):
        """Run the MLP on precomputed embeddings; returns (output, cache).

        ``shared`` holds trailing feature columns that are identical for every
        row. Its contribution to the first layer is computed once and broadcast.
        """
        self.n_evaluations += feats.shape[0]
        cache = []
        h = feats
        for i, (W, b) in enumerate(self.layers[:-1]):
            if i == 0 and shared is not None:
                d = feats.shape[1]
                z = feats @ W.value[:, :d].T + (W.value[:, d:] @ shared + b.value[0])
            else:
                z = linear_forward(W, b, h)
            r = relu_forward(z)
            n, inv_std = layernorm_forward(r)
            cache.append((h, z, n, inv_std))
            h = n
        W, b = self.layers[-1]
        out = linear_forward(W, b, h) * self.mlp.s_out
        cache.append(h)
        cache.append(shared)
        return out, cache

    def backward_features(self, cache, dout: np.ndarray) -> None:
        """Accumulate parameter grads given dL/d(output)."""
        shared = cache[-1]
        h_last = cache[-2]
        W, b = self.layers[-1]
        dh = linear_backward(W, b, h_last, dout * self.mlp.s_out)
        for i in range(len(self.layers) - 2, -1, -1):
            h, z, n, inv_std = cache[i]
            W, b = self.layers[i]
            dr = layernorm_backward(n, inv_std, dh)
            dz = relu_backward(z, dr)
            if i == 0 and shared is not None:
                d = h.shape[1]
                W.grad[:, :d] += dz.T @ h
                colsum = dz.sum(axis=0)
                W.grad[:, d:] += np.outer(colsum, shared)
                b.grad += colsum[None, :]
            else:
                # the embedding is fixed, so the first layer needs no input gradient
                dh = linear_backward(W, b, h, dz, input_grad=i > 0)


class FMLPModel(FourierMLP):
    """Image-domain model: outputs (Re, Im) of the image at (x, y, t)."""

    kind = "fmlp"

    def __init__(self, ff: FourierFeatureConfig, mlp: MLPConfig, seed: int = 0,
                 origin: tuple[float, float] = (0.0, 0.0)):
        super().__init__(ff, mlp, n_out=2, seed=seed)
        # offset added to every grid coordinate; moves the coordinate origin
        self.origin = (float(origin[0]), float(origin[1]))
        self._grid_ref = None
        self._grid_phase = None
        self._grid_feats = None

    def _grid_spatial(self, grid: CoordinateGrid):
        # holding the grid keeps the identity check valid
        if self._grid_ref is not grid:
            sp = _spatial_phase(grid.coords + np.array(self.origin), self.ff)
            self._grid_phase = (sp, np.sin(sp), np.cos(sp))
            if self.ff.mode == SEPARATE:
                self._grid_feats = np.concatenate([self._grid_phase[1], self._grid_phase[2]], axis=1)
            self._grid_ref = grid
        return self._grid_phase

    def _temporal_features(self, t: float) -> np.ndarray:
        tp = self.ff.b * (self.ff.s_t * t)
        return np.concatenate([np.sin(tp), np.cos(tp)])

    def grid_features(self, grid: CoordinateGrid, t: float) -> np.ndarray:
        """Full embedding matrix for every pixel of ``grid`` at time ``t``."""
        feats, shared = self._grid_inputs(grid, t)
        if shared is None:
            return feats
        return np.concatenate([feats, np.broadcast_to(shared, (feats.shape[0], shared.size))], axis=1)

    def _grid_inputs(self, grid: CoordinateGrid, t: float):
        sp, s, c = self._grid_spatial(grid)
        if self.ff.mode == SEPARATE:
            return self._grid_feats, self._temporal_features(t)
        # sin(a + b) and cos(a + b) from cached sin/cos of the spatial part
        tp = self.ff.B_joint[:, 2] * (self.ff.s_t * t)
        st, ct = np.sin(tp), np.cos(tp)
        return np.concatenate([s * ct + c * st, c * ct - s * st], axis=1), None

    def forward_grid(self, grid: CoordinateGrid, t: float, return_cache: bool = False):
        """Evaluate the H x W complex image at time ``t``."""
        out, cache = self.forward_features(*self._grid_inputs(grid, t))
        img = (out[:, 0] + 1j * out[:, 1]).reshape(grid.H, grid.W)
        if return_cache:
            return img, cache
        return img

    def backward_grid(self, cache, dimg: np.ndarray) -> None:
        """Backpropagate dL/dRe + i dL/dIm of the image into parameter grads."""
        d = dimg.ravel()
        dout = np.stack([d.real, d.imag], axis=1)
        self.backward_features(cache, dout)


def init_weights(cfg: MLPConfig, seed: int = 0, ff: FourierFeatureConfig | None = None) -> FMLPModel:
    """Fresh FMLP with N(0, sigma_linear^2) weights and zero biases."""
    return FMLPModel(ff if ff is not None else FourierFeatureConfig(), cfg, seed=seed)
