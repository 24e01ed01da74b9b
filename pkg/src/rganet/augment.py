"""Paired geometric augmentation and mixup. Images are (3, h, w) float arrays."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class PairedSample:
    input_image: np.ndarray
    target_image: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.input_image.shape != self.target_image.shape:
            raise ValueError(f"pair {self.id!r}: input {self.input_image.shape} "
                             f"vs target {self.target_image.shape}")


@dataclass
class AugmentConfig:
    crop_size: Optional[int] = None
    flip_prob: float = 0.5
    rotate: bool = True
    mixup_enabled: bool = True
    mixup_beta_param: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")


@dataclass(frozen=True)
class Transform:
    top: int
    left: int
    size_h: int
    size_w: int
    hflip: bool
    vflip: bool
    rot90: int


def draw_transform(rng: np.random.Generator, cfg: AugmentConfig, h: int, w: int) -> Transform:
    ch = cw = cfg.crop_size if cfg.crop_size else None
    if ch is None:
        ch, cw = h, w
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    hflip = bool(rng.random() < cfg.flip_prob)
    vflip = bool(rng.random() < cfg.flip_prob)
    k = int(rng.integers(0, 4)) if cfg.rotate else 0
    return Transform(top, left, ch, cw, hflip, vflip, k)


def apply_transform(img: np.ndarray, tr: Transform) -> np.ndarray:
    out = img[:, tr.top:tr.top + tr.size_h, tr.left:tr.left + tr.size_w]
    if tr.hflip:
        out = out[:, :, ::-1]
    if tr.vflip:
        out = out[:, ::-1, :]
    if tr.rot90:
        out = np.rot90(out, tr.rot90, axes=(1, 2))
    return np.ascontiguousarray(out)


def augment(sample: PairedSample, cfg: AugmentConfig, rng: np.random.Generator) -> PairedSample:
    """Crop/flip/rotate input and target with one shared draw."""
    tr = draw_transform(rng, cfg, *sample.input_image.shape[1:])
    return PairedSample(apply_transform(sample.input_image, tr),
                        apply_transform(sample.target_image, tr), sample.id)


def mixup(a: PairedSample, b: PairedSample, rng: Optional[np.random.Generator] = None,
          beta: float = 0.2, lam: Optional[float] = None) -> PairedSample:
    """Blend two pairs with one lambda ~ Beta(beta, beta) for both input and target."""
    if lam is None:
        lam = float(rng.beta(beta, beta))
    if lam == 1.0:
        return PairedSample(a.input_image.copy(), a.target_image.copy(), a.id)
    mix = lambda u, v: (lam * u + (1.0 - lam) * v).astype(u.dtype)  # noqa: E731
    return PairedSample(mix(a.input_image, b.input_image), mix(a.target_image, b.target_image),
                        a.id)
