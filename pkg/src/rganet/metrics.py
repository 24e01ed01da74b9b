"""Full-reference image quality metrics: PSNR, SSIM, MS-SSIM, MAE and CIEDE2000.

Inputs are (3, h, w) or (n, 3, h, w) arrays in [0, 1]. Batched inputs give the
mean over images.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .losses import ssim_components
from .tensor import Tensor

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 3 else x


def _check(pred, target):
    p, t = _batch(pred), _batch(target)
    if p.shape != t.shape:
        raise ops.ShapeError(f"metric inputs differ in shape: {p.shape} vs {t.shape}")
    return p, t


def psnr(pred, target) -> float:
    p, t = _check(pred, target)
    vals = []
    for a, b in zip(p, t):
        mse = float(np.mean((a - b) ** 2))
        vals.append(PSNR_CAP if mse < 1e-10 else 10.0 * np.log10(1.0 / mse))
    return float(np.mean(vals))


def mae255(pred, target) -> float:
    p, t = _check(pred, target)
    return float(np.mean(np.abs(p - t)) * 255.0)


def ssim(pred, target) -> float:
    p, t = _check(pred, target)
    return float(np.mean([ssim_components(Tensor(a[None]), Tensor(b[None]))[0].data.mean()
                          for a, b in zip(p, t)]))


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    x = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(0, h % 2), (0, w % 2)], mode="edge")
    return 0.25 * (x[..., ::2, ::2] + x[..., 1::2, ::2] + x[..., ::2, 1::2] + x[..., 1::2, 1::2])


def ms_ssim(pred, target, weights=MS_SSIM_WEIGHTS) -> float:
    """Five-scale MS-SSIM; contrast-structure at the first four scales, full SSIM at the last."""
    p, t = _check(pred, target)
    w = np.asarray(weights)
    out = []
    for a, b in zip(p, t):
        a, b = a[None], b[None]
        factors = []
        for s in range(len(w)):
            full, cs = ssim_components(Tensor(a), Tensor(b))
            # per-channel means, clipped at 0 so fractional powers stay real
            if s == len(w) - 1:
                factors.append(np.maximum(full.data.mean(axis=(0, 2, 3)), 0.0))
            else:
                factors.append(np.maximum(cs.data.mean(axis=(0, 2, 3)), 0.0))
                a, b = _avg_pool2(a), _avg_pool2(b)
        stack = np.stack(factors)
        out.append(float(np.mean(np.prod(stack ** w[:, None], axis=0))))
    return float(np.mean(out))


# ---------------------------------------------------------------- colour difference

_SRGB_TO_XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                         [0.2126729, 0.7151522, 0.0721750],
                         [0.0193339, 0.1191920, 0.9503041]])
_D65 = np.array([0.95047, 1.0, 1.08883])


def srgb_to_lab(rgb) -> np.ndarray:
    """sRGB in [0, 1] with channels on axis 0 -> CIE Lab (D65), same layout."""
    rgb = np.asarray(rgb, dtype=np.float64)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = np.tensordot(_SRGB_TO_XYZ, lin, axes=([1], [0]))
    xyz = xyz / _D65.reshape((3,) + (1,) * (xyz.ndim - 1))
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[1] - 16.0
    a = 500.0 * (f[0] - f[1])
    b = 200.0 * (f[1] - f[2])
    return np.stack([L, a, b])


def ciede2000(lab1, lab2) -> np.ndarray:
    """CIEDE2000 colour difference (kL = kC = kH = 1); Lab on axis 0, any trailing shape."""
    L1, a1, b1 = (np.asarray(v, dtype=np.float64) for v in lab1)
    L2, a2, b2 = (np.asarray(v, dtype=np.float64) for v in lab2)
    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    cbar7 = ((c1 + c2) / 2.0) ** 7
    g = 0.5 * (1.0 - np.sqrt(cbar7 / (cbar7 + 25.0 ** 7)))
    a1p, a2p = (1.0 + g) * a1, (1.0 + g) * a2
    c1p, c2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.where((a1p == 0) & (b1 == 0), 0.0, np.degrees(np.arctan2(b1, a1p)) % 360.0)
    h2p = np.where((a2p == 0) & (b2 == 0), 0.0, np.degrees(np.arctan2(b2, a2p)) % 360.0)

    dLp = L2 - L1
    dCp = c2p - c1p
    prod = c1p * c2p
    dh = h2p - h1p
    dhp = np.where(prod == 0, 0.0,
                   np.where(np.abs(dh) <= 180.0, dh, np.where(dh > 180.0, dh - 360.0, dh + 360.0)))
    dHp = 2.0 * np.sqrt(prod) * np.sin(np.radians(dhp) / 2.0)

    Lbar = (L1 + L2) / 2.0
    Cbar = (c1p + c2p) / 2.0
    hsum = h1p + h2p
    hbar = np.where(prod == 0, hsum,
                    np.where(np.abs(h1p - h2p) <= 180.0, hsum / 2.0,
                             np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0)))
    t = (1.0 - 0.17 * np.cos(np.radians(hbar - 30.0)) + 0.24 * np.cos(np.radians(2.0 * hbar))
         + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0)) - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0)))
    dtheta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    cbar7p = Cbar ** 7
    rc = 2.0 * np.sqrt(cbar7p / (cbar7p + 25.0 ** 7))
    sl = 1.0 + 0.015 * (Lbar - 50.0) ** 2 / np.sqrt(20.0 + (Lbar - 50.0) ** 2)
    sc = 1.0 + 0.045 * Cbar
    sh = 1.0 + 0.015 * Cbar * t
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc
    tl, tc, th = dLp / sl, dCp / sc, dHp / sh
    return np.sqrt(tl ** 2 + tc ** 2 + th ** 2 + rt * tc * th)


def ciede2000_mean(pred, target) -> float:
    p, t = _check(pred, target)
    return float(np.mean([ciede2000(srgb_to_lab(a), srgb_to_lab(b)).mean() for a, b in zip(p, t)]))


def metrics(pred, target) -> dict:
    return {
        "psnr": psnr(pred, target),
        "ssim": ssim(pred, target),
        "ms_ssim": ms_ssim(pred, target),
        "mae": mae255(pred, target),
        "ciede2000": ciede2000_mean(pred, target),
    }
