"""RGA-Net: hybrid-attention encoder, axis-decomposed decoder, cross-gated skips."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import attention as attn
from . import ops
from .params import ParamSpec, ParamStore, init_from_spec, prefixed, spec_count
from .tensor import Tensor, active_tape


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    levels: int = 3
    base_channels: int = 16
    blocks_per_level: List[int] = field(default_factory=lambda: [1, 1, 1])
    bottleneck_blocks: int = 1
    decoder_blocks_per_level: List[int] = field(default_factory=lambda: [1, 1, 1])
    window: Tuple[int, int] = (4, 4)
    block: Tuple[int, int] = (4, 4)
    grid: Tuple[int, int] = (4, 4)
    ffn_ratio: int = 2
    head_dim: int = 16
    use_dha: bool = True
    use_ada: bool = True
    use_crossgating: bool = True
    global_residual: bool = True

    def __post_init__(self):
        self.blocks_per_level = [int(b) for b in self.blocks_per_level]
        self.decoder_blocks_per_level = [int(b) for b in self.decoder_blocks_per_level]
        self.window = tuple(int(v) for v in self.window)
        self.block = tuple(int(v) for v in self.block)
        self.grid = tuple(int(v) for v in self.grid)
        self.validate()

    def validate(self) -> None:
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if len(self.blocks_per_level) != self.levels:
            raise ConfigError("blocks_per_level needs one entry per level")
        if len(self.decoder_blocks_per_level) != self.levels:
            raise ConfigError("decoder_blocks_per_level needs one entry per level")
        if self.base_channels < 1 or self.head_dim < 1:
            raise ConfigError("channel sizes must be positive")
        if self.base_channels >= self.head_dim and self.base_channels % self.head_dim:
            raise ConfigError("base_channels must be divisible by head_dim")
        for name in ("window", "block", "grid"):
            v = getattr(self, name)
            if len(v) != 2 or min(v) < 1:
                raise ConfigError(f"{name} must be two positive ints")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def heads(self, level: int) -> int:
        return attn.heads_for(self.channels(level), self.head_dim)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("window", "block", "grid"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


def toy_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def large_config(**overrides) -> ModelConfig:
    base = dict(levels=4, base_channels=32, blocks_per_level=[2, 2, 2, 2], bottleneck_blocks=2,
                decoder_blocks_per_level=[2, 2, 2, 2], window=(8, 8), block=(8, 8), grid=(8, 8))
    base.update(overrides)
    return ModelConfig(**base)


ABLATIONS = ("no_dha", "no_ada", "no_crossgating")


def make_ablation_variant(config: ModelConfig, case: str) -> ModelConfig:
    flags = {"no_dha": "use_dha", "no_ada": "use_ada", "no_crossgating": "use_crossgating"}
    if case not in flags:
        raise ValueError(f"unknown ablation case {case!r}; expected one of {ABLATIONS}")
    return dataclasses.replace(config, **{flags[case]: False})


# ---------------------------------------------------------------- blocks

def encoder_block_spec(cfg: ModelConfig, c: int, heads: int) -> ParamSpec:
    spec: ParamSpec = {}
    spec.update(prefixed("norm1", attn.norm_spec(c)))
    if cfg.use_dha:
        spec.update(prefixed("dha", attn.dha_spec(c, heads, cfg.window)))
    else:
        spec.update(prefixed("attn", attn.attention_spec(c, heads, cfg.window)))
    spec.update(prefixed("norm2", attn.norm_spec(c)))
    spec.update(prefixed("ffn", attn.ffn_spec(c, cfg.ffn_ratio)))
    return spec


def encoder_block(x, p, cfg: ModelConfig, heads: int) -> Tensor:
    y = attn.norm(x, p.scope("norm1"))
    if cfg.use_dha:
        y = attn.dha_forward(y, p.scope("dha"), cfg.window, heads)
    else:
        y = attn.shifted_window_attention(y, p.scope("attn"), cfg.window, heads)
    x = ops.add(x, y)
    return ops.add(x, attn.ffn_forward(attn.norm(x, p.scope("norm2")), p.scope("ffn")))


def window_block_spec(cfg: ModelConfig, c: int, heads: int) -> ParamSpec:
    spec: ParamSpec = {}
    spec.update(prefixed("norm1", attn.norm_spec(c)))
    spec.update(prefixed("attn", attn.attention_spec(c, heads, cfg.window)))
    spec.update(prefixed("norm2", attn.norm_spec(c)))
    spec.update(prefixed("ffn", attn.ffn_spec(c, cfg.ffn_ratio)))
    return spec


def window_block(x, p, cfg: ModelConfig, heads: int) -> Tensor:
    """Plain (unshifted) window attention block used when ADA is ablated."""
    y = attn.local_window_attention(attn.norm(x, p.scope("norm1")), p.scope("attn"), cfg.window, heads)
    x = ops.add(x, y)
    return ops.add(x, attn.ffn_forward(attn.norm(x, p.scope("norm2")), p.scope("ffn")))


def decoder_block_spec(cfg: ModelConfig, c: int, heads: int) -> ParamSpec:
    if cfg.use_ada:
        return attn.ada_spec(c, heads, cfg.block, cfg.grid, cfg.ffn_ratio)
    return window_block_spec(cfg, c, heads)


def decoder_block(x, p, cfg: ModelConfig, heads: int) -> Tensor:
    if cfg.use_ada:
        return attn.ada_forward(x, p, cfg.block, cfg.grid, heads)
    return window_block(x, p, cfg, heads)


# ---------------------------------------------------------------- cross gating

def cross_gate_spec(cfg: ModelConfig, c_enc: int, c_dec: int, heads: int,
                    upsample: bool = False) -> ParamSpec:
    if upsample:
        spec: ParamSpec = {"align.weight": ((c_dec, c_enc, 2, 2), "trunc")}
    else:
        spec = {"align.weight": ((c_enc, c_dec, 1, 1), "trunc")}
    spec["align.bias"] = ((c_enc,), "zeros")
    spec.update(prefixed("norm_x", attn.norm_spec(c_enc)))
    spec.update(prefixed("norm_y", attn.norm_spec(c_enc)))
    spec.update(prefixed("gate_x", decoder_block_spec(cfg, c_enc, heads)))
    spec.update(prefixed("gate_y", decoder_block_spec(cfg, c_enc, heads)))
    return spec


def align(y_dec, p, like_hw: Tuple[int, int]) -> Tensor:
    """Bring decoder features to the encoder's scale: transpose conv or 1x1 conv."""
    w = p["align.weight"]
    h, wd = like_hw
    yh, yw = ops._shape(y_dec)[2:]
    if (yh, yw) == (h, wd):
        if w.shape[2:] != (1, 1):
            raise ops.ShapeError("same-scale alignment needs a 1x1 align weight")
        return ops.conv2d(y_dec, w, p["align.bias"])
    if w.shape[2:] != (2, 2) or 2 * yh < h or 2 * yw < wd or yh >= h or yw >= wd:
        raise ops.ShapeError(f"cannot align {yh}x{yw} decoder features to {h}x{wd}")
    return ops.crop(ops.conv_transpose2d(y_dec, w, p["align.bias"], stride=2), h, wd)


def cross_gate(x_enc, y_dec, p, cfg: ModelConfig, heads: int) -> Tensor:
    """Reciprocal gating: each path is modulated by a sigmoid gate computed from the other."""
    y_hat = align(y_dec, p, ops._shape(x_enc)[2:])
    g_x = ops.sigmoid(decoder_block(attn.norm(x_enc, p.scope("norm_x")), p.scope("gate_x"), cfg, heads))
    g_y = ops.sigmoid(decoder_block(attn.norm(y_hat, p.scope("norm_y")), p.scope("gate_y"), cfg, heads))
    x_mod = ops.mul(x_enc, g_y)
    y_mod = ops.mul(y_hat, g_x)
    return ops.add(ops.add(x_mod, y_mod), ops.add(x_enc, y_hat))


def concat_fuse(x_enc, y_up, p) -> Tensor:
    return ops.conv2d(ops.concat([x_enc, y_up], axis=1), p["weight"], p["bias"])


# ---------------------------------------------------------------- whole network

def model_spec(cfg: ModelConfig) -> ParamSpec:
    c0 = cfg.base_channels
    spec: ParamSpec = {
        "embed.weight": ((c0, 3, 3, 3), "trunc"),
        "embed.bias": ((c0,), "zeros"),
        "head.weight": ((3, c0, 3, 3), "zeros"),
        "head.bias": ((3,), "zeros"),
    }
    for lvl in range(cfg.levels):
        c, heads = cfg.channels(lvl), cfg.heads(lvl)
        for i in range(cfg.blocks_per_level[lvl]):
            spec.update(prefixed(f"enc{lvl}.block{i}", encoder_block_spec(cfg, c, heads)))
        spec[f"enc{lvl}.down.weight"] = ((2 * c, c, 3, 3), "trunc")
        spec[f"enc{lvl}.down.bias"] = ((2 * c,), "zeros")
        spec[f"dec{lvl}.up.weight"] = ((2 * c, c, 2, 2), "trunc")
        spec[f"dec{lvl}.up.bias"] = ((c,), "zeros")
        if cfg.use_crossgating:
            spec.update(prefixed(f"dec{lvl}.cg", cross_gate_spec(cfg, c, c, heads)))
        else:
            spec[f"dec{lvl}.fuse.weight"] = ((c, 2 * c, 1, 1), "trunc")
            spec[f"dec{lvl}.fuse.bias"] = ((c,), "zeros")
        for i in range(cfg.decoder_blocks_per_level[lvl]):
            spec.update(prefixed(f"dec{lvl}.block{i}", decoder_block_spec(cfg, c, heads)))
    cb, hb = cfg.channels(cfg.levels), cfg.heads(cfg.levels)
    for i in range(cfg.bottleneck_blocks):
        spec.update(prefixed(f"bottleneck.block{i}", decoder_block_spec(cfg, cb, hb)))
    return spec


def param_count(cfg: ModelConfig) -> int:
    return spec_count(model_spec(cfg))


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    return init_from_spec(model_spec(cfg), seed, dtype)


def embed(image, p) -> Tensor:
    if ops._shape(image)[1] != 3:
        raise ops.ShapeError(f"embed expects 3 input channels, got {ops._shape(image)[1]}")
    return ops.conv2d(image, p["weight"], p["bias"], stride=1, pad=1)


def downsample(x, p) -> Tensor:
    """3x3 stride-2 conv doubling channels; odd sizes are reflect-padded to even first."""
    h, w = ops._shape(x)[2:]
    x = ops.pad_reflect(x, h % 2, w % 2)
    return ops.conv2d(x, p["weight"], p["bias"], stride=2, pad=1)


def upsample(x, p) -> Tensor:
    """2x2 stride-2 transpose conv halving channels."""
    return ops.conv_transpose2d(x, p["weight"], p["bias"], stride=2)


def rganet_forward(image, cfg: ModelConfig, params: ParamStore, train: Optional[bool] = None) -> Tensor:
    """Restore an (n, 3, h, w) image batch in [0, 1].

    ``train`` defaults to "a tape is recording"; outside training the output
    is clamped to [0, 1].
    """
    dtype = params["embed.weight"].dtype
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=dtype))
    if x.ndim != 4 or x.shape[1] != 3:
        raise ops.ShapeError(f"expected (n, 3, h, w) image, got {x.shape}")
    h, w = x.shape[2:]
    if min(h, w) < 2 ** cfg.levels:
        raise ConfigError(f"{h}x{w} input too small for {cfg.levels} levels")
    if train is None:
        train = active_tape() is not None

    f = embed(x, params.scope("embed"))
    skips = []
    for lvl in range(cfg.levels):
        heads = cfg.heads(lvl)
        for i in range(cfg.blocks_per_level[lvl]):
            f = encoder_block(f, params.scope(f"enc{lvl}.block{i}"), cfg, heads)
        skips.append(f)
        f = downsample(f, params.scope(f"enc{lvl}.down"))
    hb = cfg.heads(cfg.levels)
    for i in range(cfg.bottleneck_blocks):
        f = decoder_block(f, params.scope(f"bottleneck.block{i}"), cfg, hb)
    for lvl in reversed(range(cfg.levels)):
        skip = skips[lvl]
        heads = cfg.heads(lvl)
        up = ops.crop(upsample(f, params.scope(f"dec{lvl}.up")), *skip.shape[2:])
        if cfg.use_crossgating:
            f = cross_gate(skip, up, params.scope(f"dec{lvl}.cg"), cfg, heads)
        else:
            f = concat_fuse(skip, up, params.scope(f"dec{lvl}.fuse"))
        for i in range(cfg.decoder_blocks_per_level[lvl]):
            f = decoder_block(f, params.scope(f"dec{lvl}.block{i}"), cfg, heads)
    out = ops.conv2d(f, params["head.weight"], params["head.bias"], stride=1, pad=1)
    if cfg.global_residual:
        out = ops.add(out, x)
    if not train:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    return out
