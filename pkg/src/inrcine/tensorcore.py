"""Dense numerical kernels: unitary FFT, layer forward/backward, Adam.

Arrays are plain ``numpy`` float64 / complex128 arrays. Each layer kernel is a
pair of functions: ``*_forward`` returns the output plus whatever the backward
pass needs, ``*_backward`` consumes that cache and the upstream gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAYERNORM_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when array shapes are incompatible with an operation."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _check_pow2(img: np.ndarray) -> None:
    rows, cols = img.shape[-2:]
    if not (_is_pow2(rows) and _is_pow2(cols)):
        raise DimensionError(f"fft2 needs power-of-two dimensions, got {rows}x{cols}")


def fft2(img: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DFT over the last two axes (DC at index 0)."""
    img = np.asarray(img)
    _check_pow2(img)
    return np.fft.fft2(img, norm="ortho")


def ifft2(ksp: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2` (also its adjoint)."""
    ksp = np.asarray(ksp)
    _check_pow2(ksp)
    return np.fft.ifft2(ksp, norm="ortho")


def dft2_naive(img: np.ndarray) -> np.ndarray:
    """Direct double-sum DFT with the same unitary scaling as :func:`fft2`.

    Builds the full ``(H, W, H, W)`` kernel, so keep inputs small (<= 32x32).
    Works for any rectangular shape.
    """
    img = np.asarray(img, dtype=complex)
    if img.ndim != 2:
        raise DimensionError("dft2_naive expects a 2-D array")
    rows, cols = img.shape
    k = np.arange(rows)
    m = np.arange(rows)
    l = np.arange(cols)
    n = np.arange(cols)
    # phase[k, l, m, n] = km/H + ln/W
    phase = (np.multiply.outer(k, m) / rows)[:, None, :, None] + (
        np.multiply.outer(l, n) / cols
    )[None, :, None, :]
    kernel = np.exp(-2j * np.pi * phase)
    out = np.einsum("klmn,mn->kl", kernel, img)
    return out / np.sqrt(rows * cols)


@dataclass
class Parameter:
    """A trainable tensor with its gradient buffer and Adam moments."""

    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64, ndmin=2)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def linear_forward(W: Parameter, bias: Parameter, X: np.ndarray) -> np.ndarray:
    """``Y = X @ W.T + bias`` with ``W`` of shape (out, in) and bias (1, out)."""
    if X.ndim != 2 or X.shape[1] != W.value.shape[1]:
        raise DimensionError(
            f"linear: input {X.shape} incompatible with weight {W.value.shape}"
        )
    if bias.value.shape != (1, W.value.shape[0]):
        raise DimensionError(f"linear: bias shape {bias.value.shape} != (1, {W.value.shape[0]})")
    return X @ W.value.T + bias.value


def linear_backward(
    W: Parameter, bias: Parameter, X: np.ndarray, dY: np.ndarray, input_grad: bool = True
) -> np.ndarray | None:
    """Accumulate weight/bias grads; return dL/dX (or None if not requested)."""
    if dY.shape != (X.shape[0], W.value.shape[0]):
        raise DimensionError(f"linear_backward: upstream grad {dY.shape} mismatched")
    W.grad += dY.T @ X
    bias.grad += dY.sum(axis=0, keepdims=True)
    if input_grad:
        return dY @ W.value
    return None


def relu_forward(X: np.ndarray) -> np.ndarray:
    return np.maximum(X, 0.0)


def relu_backward(X: np.ndarray, dY: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return dY * (X > 0.0)


def layernorm_forward(X: np.ndarray, eps: float = LAYERNORM_EPS):
    """Normalize each row to zero mean and unit (population) variance.

    Returns ``(Y, inv_std)``; both are needed by :func:`layernorm_backward`.
    """
    if X.shape[-1] < 2:
        raise DimensionError("layernorm needs at least two features")
    n = X.shape[-1]
    xc = X - X.sum(axis=-1, keepdims=True) / n
    var = np.einsum("...i,...i->...", xc, xc)[..., None] / n
    inv_std = 1.0 / np.sqrt(var + eps)
    xc *= inv_std
    return xc, inv_std


def layernorm_backward(Y: np.ndarray, inv_std: np.ndarray, dY: np.ndarray) -> np.ndarray:
    n = dY.shape[-1]
    mean_dy = dY.sum(axis=-1, keepdims=True) / n
    mean_dyy = np.einsum("...i,...i->...", dY, Y)[..., None] / n
    out = dY - mean_dy
    out -= Y * mean_dyy
    out *= inv_std
    return out


def adam_step(params: list[Parameter], cfg: AdamConfig) -> None:
    """Bias-corrected Adam update in place, then zero the gradients."""
    cfg.step_count += 1
    t = cfg.step_count
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    step = cfg.lr / c1
    sqrt_c2 = np.sqrt(c2)
    for p in params:
        g = p.grad
        p.m *= cfg.beta1
        p.m += (1.0 - cfg.beta1) * g
        p.v *= cfg.beta2
        p.v += (1.0 - cfg.beta2) * (g * g)
        p.value -= step * p.m / (np.sqrt(p.v) / sqrt_c2 + cfg.eps)
        p.zero_grad()
