"""Window, block and grid self-attention plus the two hybrid attention modules.

Token groups are (groups, tokens, channels) tensors. Everything that needs
an exact tiling reflect-pads the bottom/right edges first and crops after
the inverse, so any spatial size is accepted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from . import ops
from .params import ParamSpec, prefixed
from .tensor import Tensor

MASK_VALUE = -1e9


@dataclass(frozen=True)
class PadRecord:
    """Original spatial dims and the tile used, so a partition can be undone."""
    n: int
    c: int
    h: int
    w: int
    hp: int
    wp: int
    tile_h: int
    tile_w: int


def _ceil_to(v: int, m: int) -> int:
    return -(-v // m) * m


def pad_to_multiple(x, mh: int, mw: int) -> Tuple[Tensor, PadRecord]:
    n, c, h, w = ops._shape(x)
    hp, wp = _ceil_to(h, mh), _ceil_to(w, mw)
    xp = ops.pad_reflect(x, hp - h, wp - w)
    return xp, PadRecord(n, c, h, w, hp, wp, mh, mw)


def cyclic_shift(x, s_r: int, s_c: int) -> Tensor:
    """out[i, j] = x[(i + s_r) mod h, (j + s_c) mod w] on every channel."""
    if s_r == 0 and s_c == 0:
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    return ops.roll(x, (-s_r, -s_c), (2, 3))


# ---------------------------------------------------------------- partitions

def _tile(x, m: int, nn: int) -> Tensor:
    n, c, h, w = ops._shape(x)
    t = ops.reshape(x, (n, c, h // m, m, w // nn, nn))
    t = ops.transpose(t, (0, 2, 4, 3, 5, 1))
    return ops.reshape(t, (n * (h // m) * (w // nn), m * nn, c))


def _untile(t, rec: PadRecord) -> Tensor:
    m, nn = rec.tile_h, rec.tile_w
    x = ops.reshape(t, (rec.n, rec.hp // m, rec.wp // nn, m, nn, rec.c))
    x = ops.transpose(x, (0, 5, 1, 3, 2, 4))
    return ops.reshape(x, (rec.n, rec.c, rec.hp, rec.wp))


def window_partition(x, m: int, nn: int, pad: bool = True) -> Tuple[Tensor, PadRecord]:
    """Split into non-overlapping m x nn windows, tokens row-major inside a window.

    Windows are ordered batch-major, then window row, then window column.
    """
    if pad:
        x, rec = pad_to_multiple(x, m, nn)
    else:
        n, c, h, w = ops._shape(x)
        if h % m or w % nn:
            raise ValueError(f"{h}x{w} is not divisible into {m}x{nn} windows")
        rec = PadRecord(n, c, h, w, h, w, m, nn)
    return _tile(x, m, nn), rec


def window_reverse(windows, rec: PadRecord) -> Tensor:
    return ops.crop(_untile(windows, rec), rec.h, rec.w)


block_partition = window_partition
block_reverse = window_reverse


def grid_partition(x, gh: int, gw: int, pad: bool = True) -> Tuple[Tensor, PadRecord]:
    """Dilated grouping: the map is cut into gh x gw cells and each group holds
    the gh*gw tokens that share one within-cell offset.

    Groups are ordered by (batch, row offset, column offset); tokens inside a
    group are ordered by (cell row, cell column).
    """
    if pad:
        x, rec = pad_to_multiple(x, gh, gw)
    else:
        n, c, h, w = ops._shape(x)
        if h % gh or w % gw:
            raise ValueError(f"{h}x{w} is not divisible by a {gh}x{gw} grid")
        rec = PadRecord(n, c, h, w, h, w, gh, gw)
    n, c, hp, wp = ops._shape(x)
    ch, cw = hp // gh, wp // gw
    t = ops.reshape(x, (n, c, gh, ch, gw, cw))
    t = ops.transpose(t, (0, 3, 5, 2, 4, 1))
    return ops.reshape(t, (n * ch * cw, gh * gw, c)), rec


def grid_reverse(groups, rec: PadRecord) -> Tensor:
    gh, gw = rec.tile_h, rec.tile_w
    ch, cw = rec.hp // gh, rec.wp // gw
    x = ops.reshape(groups, (rec.n, ch, cw, gh, gw, rec.c))
    x = ops.transpose(x, (0, 5, 3, 1, 4, 2))
    return ops.crop(ops.reshape(x, (rec.n, rec.c, rec.hp, rec.wp)), rec.h, rec.w)


# ---------------------------------------------------------------- masks / bias index

@lru_cache(maxsize=None)
def relative_position_index(m: int, nn: int) -> np.ndarray:
    """(m*nn, m*nn) table row for each token pair, from their coordinate difference."""
    rr, cc = np.meshgrid(np.arange(m), np.arange(nn), indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()])
    rel = coords[:, :, None] - coords[:, None, :]
    idx = (rel[0] + m - 1) * (2 * nn - 1) + (rel[1] + nn - 1)
    idx.setflags(write=False)
    return idx


def default_shift(h: int, w: int, m: int, nn: int) -> Tuple[int, int]:
    """Half-window shift, disabled along an axis that a single window covers."""
    return (m // 2 if h > m else 0, nn // 2 if w > nn else 0)


@lru_cache(maxsize=None)
def _mask_cached(h, w, m, nn, s_r, s_c):
    if s_r == 0 and s_c == 0:
        out = np.zeros(((h // m) * (w // nn), m * nn, m * nn))
    else:
        region = np.zeros((h, w), dtype=np.int64)
        for i, rs in enumerate(((0, h - m), (h - m, h - s_r), (h - s_r, h))):
            for j, cs in enumerate(((0, w - nn), (w - nn, w - s_c), (w - s_c, w))):
                region[rs[0]:rs[1], cs[0]:cs[1]] = 3 * i + j
        r = region.reshape(h // m, m, w // nn, nn).transpose(0, 2, 1, 3).reshape(-1, m * nn)
        out = np.where(r[:, :, None] == r[:, None, :], 0.0, MASK_VALUE)
    out.setflags(write=False)
    return out


def shift_attention_mask(h: int, w: int, m: int, nn: int,
                         shift: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Additive (windows, m*nn, m*nn) mask for attention on a cyclically shifted map.

    Entries are 0 for token pairs from the same pre-shift region and
    ``MASK_VALUE`` otherwise. ``h``/``w`` must be multiples of the window.
    """
    if h % m or w % nn:
        raise ValueError(f"{h}x{w} is not a multiple of the {m}x{nn} window")
    s_r, s_c = default_shift(h, w, m, nn) if shift is None else shift
    return _mask_cached(h, w, m, nn, int(s_r), int(s_c))


# ---------------------------------------------------------------- attention

def heads_for(c: int, head_dim: int) -> int:
    heads = max(1, c // head_dim)
    if c % heads:
        raise ValueError(f"{c} channels cannot be split into {heads} heads")
    return heads


def attention_spec(c: int, heads: int, group: Tuple[int, int]) -> ParamSpec:
    gm, gn = group
    return {
        "qkv.weight": ((3 * c, c), "trunc"),
        "qkv.bias": ((3 * c,), "zeros"),
        "proj.weight": ((c, c), "trunc"),
        "proj.bias": ((c,), "zeros"),
        "rel_bias": (((2 * gm - 1) * (2 * gn - 1), heads), "trunc"),
    }


def window_attention(tokens, p, group: Tuple[int, int], heads: int,
                     mask: Optional[np.ndarray] = None) -> Tensor:
    """Multi-head self-attention inside each token group.

    ``tokens`` is (groups, t, c) with t = group[0]*group[1]. ``mask`` is an
    additive (mask_groups, t, t) array; groups are assumed to cycle through
    the mask entries batch by batch.
    """
    g_count, t, c = ops._shape(tokens)
    if t != group[0] * group[1]:
        raise ValueError(f"group of {t} tokens does not match geometry {group}")
    if c % heads:
        raise ValueError(f"{c} channels not divisible by {heads} heads")
    hd = c // heads
    dtype = ops._d(tokens).dtype

    qkv = ops.linear(tokens, p["qkv.weight"], p["qkv.bias"])
    qkv = ops.transpose(ops.reshape(qkv, (g_count, t, 3, heads, hd)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = ops.matmul(ops.mul(q, dtype.type(1.0 / math.sqrt(hd))), ops.transpose(k, (0, 1, 3, 2)))

    idx = relative_position_index(*group)
    bias = ops.take(p["rel_bias"], idx.ravel(), axis=0)
    bias = ops.transpose(ops.reshape(bias, (t, t, heads)), (2, 0, 1))
    scores = ops.add(scores, bias)
    if mask is not None and np.any(mask):
        nw = mask.shape[0]
        scores = ops.reshape(scores, (g_count // nw, nw, heads, t, t))
        scores = ops.add(scores, mask.astype(dtype)[None, :, None])
        scores = ops.reshape(scores, (g_count, heads, t, t))
    attn = ops.softmax(scores, axis=-1)
    out = ops.matmul(attn, v)
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (g_count, t, c))
    return ops.linear(out, p["proj.weight"], p["proj.bias"])


# ---------------------------------------------------------------- spectral branch

def spectral_spec(c: int) -> ParamSpec:
    return {"weight": ((2, c, c), "trunc"), "bias": ((2, c), "zeros")}


def spectral_branch(x, weight, bias) -> Tensor:
    """Global filtering: fft2 per channel, complex 1x1 channel mix, inverse fft."""
    return ops.spectral_mix(x, weight, bias)


# ---------------------------------------------------------------- dual-stream hybrid attention

def dha_spec(c: int, heads: int, window: Tuple[int, int]) -> ParamSpec:
    spec: ParamSpec = {"alpha_raw": ((1,), "zeros")}
    spec.update(prefixed("shift", attention_spec(c, heads, window)))
    spec.update(prefixed("spectral", spectral_spec(c)))
    spec.update(prefixed("local", attention_spec(c, heads, window)))
    return spec


def shifted_window_attention(x, p, window: Tuple[int, int], heads: int,
                             shift: Optional[Tuple[int, int]] = None) -> Tensor:
    """Masked attention on the cyclically shifted map, shifted back and cropped."""
    m, nn = window
    xp, rec = pad_to_multiple(x, m, nn)
    s = default_shift(rec.hp, rec.wp, m, nn) if shift is None else shift
    shifted = cyclic_shift(xp, *s)
    windows = _tile(shifted, m, nn)
    mask = shift_attention_mask(rec.hp, rec.wp, m, nn, s)
    y = window_attention(windows, p, window, heads, mask)
    y = cyclic_shift(_untile(y, rec), -s[0], -s[1])
    return ops.crop(y, rec.h, rec.w)


def local_window_attention(x, p, window: Tuple[int, int], heads: int) -> Tensor:
    windows, rec = window_partition(x, *window)
    return window_reverse(window_attention(windows, p, window, heads), rec)


def dha_branches(x, p, window: Tuple[int, int], heads: int) -> Tuple[Tensor, Tensor]:
    b_shift = ops.add(shifted_window_attention(x, p.scope("shift"), window, heads),
                      spectral_branch(x, p["spectral.weight"], p["spectral.bias"]))
    b_local = local_window_attention(x, p.scope("local"), window, heads)
    return b_shift, b_local


def dha_forward(x, p, window: Tuple[int, int], heads: int) -> Tensor:
    """alpha * shifted-and-spectral branch + (1 - alpha) * local branch."""
    b_shift, b_local = dha_branches(x, p, window, heads)
    alpha = ops.reshape(ops.sigmoid(p["alpha_raw"]), (1, 1, 1, 1))
    return ops.add(ops.mul(alpha, b_shift), ops.mul(ops.sub(1.0, alpha), b_local))


# ---------------------------------------------------------------- feed-forward

def ffn_spec(c: int, ratio: int) -> ParamSpec:
    hidden = ratio * c
    return {
        "expand.weight": ((2 * hidden, c, 1, 1), "trunc"),
        "expand.bias": ((2 * hidden,), "zeros"),
        "dw.weight": ((2 * hidden, 1, 3, 3), "trunc"),
        "dw.bias": ((2 * hidden,), "zeros"),
        "project.weight": ((c, hidden, 1, 1), "trunc"),
        "project.bias": ((c,), "zeros"),
    }


def ffn_forward(x, p) -> Tensor:
    """Gated depthwise feed-forward: project(gelu(a) * b) where (a, b) = dw(expand(x))."""
    y = ops.conv2d(x, p["expand.weight"], p["expand.bias"])
    y = ops.depthwise_conv2d(y, p["dw.weight"], p["dw.bias"], pad=1)
    half = ops._shape(y)[1] // 2
    a = y[:, :half]
    b = y[:, half:]
    return ops.conv2d(ops.mul(ops.gelu(a), b), p["project.weight"], p["project.bias"])


def norm_spec(c: int) -> ParamSpec:
    return {"weight": ((c,), "ones"), "bias": ((c,), "zeros")}


def norm(x, p) -> Tensor:
    return ops.layer_norm(x, p["weight"], p["bias"], eps=1e-5, axis=1)


# ---------------------------------------------------------------- axis-decomposed attention

def ada_spec(c: int, heads: int, block: Tuple[int, int], grid: Tuple[int, int],
             ffn_ratio: int) -> ParamSpec:
    spec: ParamSpec = {}
    spec.update(prefixed("norm1", norm_spec(c)))
    spec.update(prefixed("block", attention_spec(c, heads, block)))
    spec.update(prefixed("norm2", norm_spec(c)))
    spec.update(prefixed("grid", attention_spec(c, heads, grid)))
    spec.update(prefixed("norm3", norm_spec(c)))
    spec.update(prefixed("ffn", ffn_spec(c, ffn_ratio)))
    return spec


def block_attention(x, p, block: Tuple[int, int], heads: int) -> Tensor:
    groups, rec = block_partition(x, *block)
    return block_reverse(window_attention(groups, p, block, heads), rec)


def grid_attention(x, p, grid: Tuple[int, int], heads: int) -> Tensor:
    groups, rec = grid_partition(x, *grid)
    return grid_reverse(window_attention(groups, p, grid, heads), rec)


def ada_forward(x, p, block: Tuple[int, int], grid: Tuple[int, int], heads: int) -> Tensor:
    x1 = ops.add(x, block_attention(norm(x, p.scope("norm1")), p.scope("block"), block, heads))
    x2 = ops.add(x1, grid_attention(norm(x1, p.scope("norm2")), p.scope("grid"), grid, heads))
    return ops.add(x2, ffn_forward(norm(x2, p.scope("norm3")), p.scope("ffn")))
