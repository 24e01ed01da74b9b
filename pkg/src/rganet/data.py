"""Paired datasets on disk and synthetic smoke for desk-scale supervision."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image

from .augment import PairedSample


class PairingError(ValueError):
    pass


class DecodeError(ValueError):
    pass


# ---------------------------------------------------------------- image files

def load_png(path) -> np.ndarray:
    """8-bit RGB file -> (3, h, w) float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except Exception as exc:  # PIL raises several unrelated types
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img).transpose(1, 2, 0), mode="RGB").save(path)


def _image_files(d: Path) -> dict:
    return {p.stem: p for p in sorted(d.iterdir()) if p.is_file() and p.suffix.lower() == ".png"}


def load_dataset(root) -> List[PairedSample]:
    """Pairs ``root/input/*.png`` with ``root/target/*.png`` by stem, sorted by stem."""
    root = Path(root)
    inputs = _image_files(root / "input")
    targets = _image_files(root / "target")
    for stem in sorted(set(inputs) ^ set(targets)):
        side = "target" if stem in inputs else "input"
        raise PairingError(f"{stem!r} has no counterpart in {root / side}")
    return [PairedSample(load_png(inputs[s]), load_png(targets[s]), s) for s in sorted(inputs)]


def save_dataset(root, samples: List[PairedSample]) -> None:
    root = Path(root)
    for s in samples:
        save_png(root / "input" / f"{s.id}.png", s.input_image)
        save_png(root / "target" / f"{s.id}.png", s.target_image)


# ---------------------------------------------------------------- synthetic smoke

@dataclass
class SmokeParams:
    airlight: Tuple[float, float, float] = (0.9, 0.9, 0.9)
    density: float = 1.0
    octaves: int = 4
    base_frequency: int = 4
    persistence: float = 0.5
    seed: int = 0


def _bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    gh, gw = grid.shape
    ys = np.linspace(0.0, gh - 1.0, h)
    xs = np.linspace(0.0, gw - 1.0, w)
    y0 = np.minimum(np.floor(ys).astype(int), gh - 2)
    x0 = np.minimum(np.floor(xs).astype(int), gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def value_noise(h: int, w: int, rng: np.random.Generator, octaves: int = 4,
                base_frequency: int = 4, persistence: float = 0.5) -> np.ndarray:
    """Multi-octave bilinear value noise in [0, 1]."""
    total = np.zeros((h, w))
    weight_sum = 0.0
    amp = 1.0
    for o in range(octaves):
        cells = base_frequency * 2 ** o
        total += amp * _bilinear_upsample(rng.random((cells + 1, cells + 1)), h, w)
        weight_sum += amp
        amp *= persistence
    return total / weight_sum


def synth_smoke(clean: np.ndarray, p: SmokeParams, rng: Optional[np.random.Generator] = None,
                density_map: Optional[np.ndarray] = None) -> np.ndarray:
    """Scattering composite clean * t + A * (1 - t) with t = exp(-density * d)."""
    _, h, w = clean.shape
    if density_map is None:
        rng = rng if rng is not None else np.random.default_rng(p.seed)
        density_map = value_noise(h, w, rng, p.octaves, p.base_frequency, p.persistence)
    t = np.exp(-p.density * density_map)[None]
    a = np.asarray(p.airlight, dtype=np.float64).reshape(3, 1, 1)
    out = clean * t + a * (1.0 - t)
    return np.clip(out, 0.0, 1.0).astype(clean.dtype)


def random_smoke_params(rng: np.random.Generator) -> SmokeParams:
    grey = rng.uniform(0.75, 1.0)
    tint = rng.uniform(-0.05, 0.05, size=3)
    airlight = tuple(float(v) for v in np.clip(grey + tint, 0.7, 1.0))
    return SmokeParams(airlight=airlight, density=float(rng.uniform(0.6, 1.8)),
                       seed=int(rng.integers(0, 2 ** 31)))


def procedural_scene(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """A smooth reddish 'tissue' image with vessel-like streaks and specular spots."""
    base = np.array([0.65, 0.25, 0.2]) + rng.uniform(-0.1, 0.1, size=3)
    shade = value_noise(h, w, rng, octaves=3, base_frequency=2)
    img = base.reshape(3, 1, 1) * (0.55 + 0.6 * shade)[None]
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    for _ in range(int(rng.integers(2, 5))):
        ang = rng.uniform(0, np.pi)
        off = rng.uniform(0.2, 0.8)
        wave = rng.uniform(2.0, 6.0)
        d = np.abs(np.cos(ang) * xx + np.sin(ang) * yy - off - 0.05 * np.sin(wave * np.pi * (xx + yy)))
        vessel = np.exp(-(d / rng.uniform(0.008, 0.02)) ** 2)
        img = img * (1 - 0.5 * vessel[None]) + vessel[None] * np.array([0.45, 0.05, 0.08]).reshape(3, 1, 1) * 0.5
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.01, 0.04)
        spot = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img = img + 0.6 * spot[None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_synthetic_pairs(count: int, size: int, seed: int, prefix: str = "s") -> List[PairedSample]:
    """Procedural clean scenes with random smoke, reproducible from ``seed``."""
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        clean = procedural_scene(size, size, rng)
        smoky = synth_smoke(clean, random_smoke_params(rng), rng)
        out.append(PairedSample(smoky, clean, f"{prefix}{i:05d}"))
    return out


def smoke_clean_images(clean_dir, seed: int) -> List[PairedSample]:
    """Pair every PNG in ``clean_dir`` with a synthetic smoky version."""
    out = []
    for i, (stem, path) in enumerate(_image_files(Path(clean_dir)).items()):
        rng = np.random.default_rng([seed, i])
        clean = load_png(path)
        out.append(PairedSample(synth_smoke(clean, random_smoke_params(rng), rng), clean, stem))
    return out
