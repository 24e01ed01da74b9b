"""SSIM (differentiable) and the L2 + lambda * (1 - SSIM) training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEFAULT_LAMBDA = 0.2


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def window_size_for(h: int, w: int, size: int = SSIM_WINDOW) -> int:
    """Largest odd window <= ``size`` that fits an h x w image."""
    k = min(size, h, w)
    return k if k % 2 else k - 1


def _blur(x, k: int, c: int, dtype) -> Tensor:
    g = gaussian_window(k).astype(dtype)
    wv = np.broadcast_to(g.reshape(1, 1, k, 1), (c, 1, k, 1)).copy()
    wh = np.broadcast_to(g.reshape(1, 1, 1, k), (c, 1, 1, k)).copy()
    return ops.depthwise_conv2d(ops.depthwise_conv2d(x, wv), wh)


def ssim_components(x, y, window: int = SSIM_WINDOW):
    """Per-position (ssim, contrast-structure) maps over the valid region."""
    xd = ops._d(x)
    n, c, h, w = xd.shape
    if ops._shape(y) != xd.shape:
        raise ops.ShapeError(f"ssim needs equal shapes, got {xd.shape} and {ops._shape(y)}")
    k = window_size_for(h, w, window)
    dtype = xd.dtype
    mu_x = _blur(x, k, c, dtype)
    mu_y = _blur(y, k, c, dtype)
    mu_xx = ops.square(mu_x)
    mu_yy = ops.square(mu_y)
    mu_xy = ops.mul(mu_x, mu_y)
    s_xx = ops.sub(_blur(ops.square(x), k, c, dtype), mu_xx)
    s_yy = ops.sub(_blur(ops.square(y), k, c, dtype), mu_yy)
    s_xy = ops.sub(_blur(ops.mul(x, y), k, c, dtype), mu_xy)
    cs = ops.div(ops.add(ops.mul(2.0, s_xy), SSIM_C2), ops.add(ops.add(s_xx, s_yy), SSIM_C2))
    lum = ops.div(ops.add(ops.mul(2.0, mu_xy), SSIM_C1), ops.add(ops.add(mu_xx, mu_yy), SSIM_C1))
    return ops.mul(lum, cs), cs


def ssim_map(x, y, window: int = SSIM_WINDOW) -> Tensor:
    return ssim_components(x, y, window)[0]


def ssim_mean(x, y, window: int = SSIM_WINDOW) -> Tensor:
    """Mean SSIM over batch, channels and valid positions. Images in [0, 1]."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=x.dtype))
    if x.ndim == 3:
        x, y = ops.reshape(x, (1,) + x.shape), ops.reshape(y, (1,) + y.shape)
    return ops.mean(ssim_map(x, y, window))


@dataclass
class LossBreakdown:
    l2: float
    ssim_term: float
    total: float
    lam: float
    tensor: Tensor  # differentiable total


def loss_total(pred, target, lam: float = DEFAULT_LAMBDA) -> LossBreakdown:
    """MSE + lam * (1 - SSIM)."""
    l2 = ops.mse(pred, target)
    ssim_term = ops.sub(1.0, ssim_mean(pred, target))
    total = ops.add(l2, ops.mul(lam, ssim_term))
    return LossBreakdown(float(l2.data), float(ssim_term.data), float(total.data), lam, total)
