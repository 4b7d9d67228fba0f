"""Differentiable training losses: mean absolute error, mean squared error,
structural similarity, and its multi-scale variant.

Similarity statistics are computed over Gaussian-windowed patches (size 11,
sigma 1.5) at valid window centers. The multi-scale index combines contrast/
structure terms from every level with the full similarity at the coarsest
level, each raised to its level weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import (avgpool2x2, clamp_min, elementwise_abs, filter2d_valid, mean_reduce,
                  mul, pow_scalar, square, sub)
from .tensor import Tensor

_CS_FLOOR = 1e-6


@dataclass(frozen=True)
class SSIMParams:
    """Stabilization constants, window, and multi-scale weighting."""

    c1: float
    c2: float
    window_size: int = 11
    sigma: float = 1.5
    levels: int = 1
    level_weights: tuple = ()

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("SSIM constants C1, C2 must be > 0")
        if self.levels < 1:
            raise ConfigError("number of scales K must be >= 1")
        weights = self.level_weights or tuple([1.0 / self.levels] * self.levels)
        if len(weights) != self.levels:
            raise ConfigError("level_weights length must equal K")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError("level_weights must sum to 1")
        object.__setattr__(self, "level_weights", tuple(float(v) for v in weights))

    @classmethod
    def for_dynamic_range(cls, dynamic_range: float, levels: int = 1, **kw) -> "SSIMParams":
        # the conventional stabilizers (0.01 L)^2 and (0.03 L)^2
        if dynamic_range <= 0:
            raise ConfigError("dynamic range must be > 0")
        return cls(c1=(0.01 * dynamic_range) ** 2, c2=(0.03 * dynamic_range) ** 2,
                   levels=levels, **kw)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-d Gaussian window (sums to 1)."""
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _check_pair(x: Tensor, y: Tensor):
    if x.shape != y.shape:
        raise ShapeError(f"image batches must share shape, got {x.shape} vs {y.shape}")
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"expected single-channel [N,1,H,W] batches, got {x.shape}")


def l1_loss(x: Tensor, y: Tensor) -> Tensor:
    """Mean absolute error over all pixels, averaged over the batch."""
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return mean_reduce(elementwise_abs(sub(x, y)))


def mse_loss(x: Tensor, y: Tensor) -> Tensor:
    """Mean squared error over all pixels, averaged over the batch."""
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return mean_reduce(square(sub(x, y)))


def ssim_components(x: Tensor, y: Tensor, params: SSIMParams):
    """Per-center luminance*contrast-structure map and the cs map alone."""
    _check_pair(x, y)
    win = gaussian_window(params.window_size, params.sigma)
    mu_x = filter2d_valid(x, win)
    mu_y = filter2d_valid(y, win)
    xx = filter2d_valid(mul(x, x), win)
    yy = filter2d_valid(mul(y, y), win)
    xy = filter2d_valid(mul(x, y), win)
    var_x = sub(xx, mul(mu_x, mu_x))
    var_y = sub(yy, mul(mu_y, mu_y))
    cov = sub(xy, mul(mu_x, mu_y))

    lum = (2.0 * mul(mu_x, mu_y) + params.c1) / (mul(mu_x, mu_x) + mul(mu_y, mu_y) + params.c1)
    cs = (2.0 * cov + params.c2) / (var_x + var_y + params.c2)
    return mul(lum, cs), cs


def ssim_map(x: Tensor, y: Tensor, params: SSIMParams) -> Tensor:
    return ssim_components(x, y, params)[0]


def ssim_index(x: Tensor, y: Tensor, params: SSIMParams) -> Tensor:
    """Mean similarity over valid window centers; 1 iff x == y."""
    return mean_reduce(ssim_map(x, y, params))


def ssim_loss(x: Tensor, y: Tensor, params: SSIMParams) -> Tensor:
    return 1.0 - ssim_index(x, y, params)


def _check_msssim_feasible(shape, params: SSIMParams):
    h, w = shape[2], shape[3]
    for level in range(params.levels):
        if h < params.window_size or w < params.window_size:
            raise ConfigError(
                f"K={params.levels} infeasible: level {level} image {h}x{w} "
                f"smaller than window {params.window_size}")
        if level < params.levels - 1 and (h % 2 or w % 2):
            raise ConfigError(
                f"K={params.levels} infeasible: level {level} image {h}x{w} not even")
        h, w = h // 2, w // 2


def _weighted_term(scalar: Tensor, weight: float) -> Tensor:
    # fractional exponents need a positive base; unit weight passes through
    # untouched so K=1 degenerates to the plain single-scale index exactly
    if weight == 1.0:
        return scalar
    return pow_scalar(clamp_min(scalar, _CS_FLOOR), weight)


def msssim_index(x: Tensor, y: Tensor, params: SSIMParams) -> Tensor:
    """Multi-scale index: cs at levels 1..K-1, full similarity at level K.

    Pooled per-level means are raised to the level weights; downsampling
    between levels is 2x2 average pooling.
    """
    _check_pair(x, y)
    _check_msssim_feasible(x.shape, params)
    result = None
    for level in range(params.levels):
        weight = params.level_weights[level]
        if level < params.levels - 1:
            _, cs = ssim_components(x, y, params)
            term = _weighted_term(mean_reduce(cs), weight)
            x = avgpool2x2(x)
            y = avgpool2x2(y)
        else:
            term = _weighted_term(ssim_index(x, y, params), weight)
        result = term if result is None else mul(result, term)
    return result


def msssim_loss(x: Tensor, y: Tensor, params: SSIMParams) -> Tensor:
    return 1.0 - msssim_index(x, y, params)


LOSS_NAMES = ("l1", "mse", "ssim", "msssim")


def make_loss(name: str, params: SSIMParams | None = None):
    """Loss factory used by the training loop and the loss ablation."""
    if name == "l1":
        return l1_loss
    if name == "mse":
        return mse_loss
    if name in ("ssim", "msssim"):
        if params is None:
            raise ConfigError(f"{name} loss requires SSIMParams")
        fn = ssim_loss if name == "ssim" else msssim_loss
        return lambda x, y: fn(x, y, params)
    raise ConfigError(f"unknown loss {name!r}; choose from {LOSS_NAMES}")
