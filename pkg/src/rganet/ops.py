"""Differentiable tensor operations.

Every function accepts Tensors, numpy arrays or Python scalars and returns a
Tensor. Each op computes its forward value with numpy and registers a
vector-Jacobian product on the active tape (see :mod:`rganet.tensor`).
Images and feature maps use (batch, channel, row, col) layout.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from . import kernels
from .tensor import Tensor, record


class ShapeError(ValueError):
    pass


def _d(x):
    return x.data if isinstance(x, Tensor) else x


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _shape(x):
    return np.shape(_d(x))


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    sa, sb = _shape(a), _shape(b)
    out = Tensor(_d(a) + _d(b))
    return record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    sa, sb = _shape(a), _shape(b)
    out = Tensor(_d(a) - _d(b))
    return record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    ad, bd = _d(a), _d(b)
    out = Tensor(ad * bd)

    def vjp(g):
        ga = _unbroadcast(g * bd, np.shape(ad)) if isinstance(a, Tensor) else None
        gb = _unbroadcast(g * ad, np.shape(bd)) if isinstance(b, Tensor) else None
        return ga, gb

    return record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    ad, bd = _d(a), _d(b)
    out = Tensor(ad / bd)

    def vjp(g):
        ga = _unbroadcast(g / bd, np.shape(ad)) if isinstance(a, Tensor) else None
        gb = _unbroadcast(-g * out.data / bd, np.shape(bd)) if isinstance(b, Tensor) else None
        return ga, gb

    return record(out, (a, b), vjp)


def square(x) -> Tensor:
    xd = _d(x)
    out = Tensor(xd * xd)
    return record(out, (x,), lambda g: (2.0 * g * xd,))


def exp(x) -> Tensor:
    out = Tensor(np.exp(_d(x)))
    return record(out, (x,), lambda g: (g * out.data,))


def sigmoid(x) -> Tensor:
    out = Tensor(special.expit(_d(x)))
    return record(out, (x,), lambda g: (g * out.data * (1.0 - out.data),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = _d(x)
    cdf = 0.5 * (1.0 + special.erf(xd * _INV_SQRT2))
    out = Tensor(xd * cdf)

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return record(out, (x,), vjp)


# ---------------------------------------------------------------- reductions / shape

def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    xd = _d(x)
    out = Tensor(np.sum(xd, axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xd.shape).copy(),)

    return record(out, (x,), vjp)


def mean(x, axis=None, keepdims=False) -> Tensor:
    xd = _d(x)
    count = xd.size if axis is None else int(np.prod([xd.shape[a] for a in np.atleast_1d(axis)]))
    out = Tensor(np.mean(xd, axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, xd.shape).copy(),)

    return record(out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    xd = _d(x)
    out = Tensor(xd.reshape(shape))
    return record(out, (x,), lambda g: (g.reshape(xd.shape),))


def transpose(x, axes) -> Tensor:
    inv = tuple(np.argsort(axes))
    out = Tensor(np.transpose(_d(x), axes))
    return record(out, (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, index) -> Tensor:
    xd = _d(x)
    out = Tensor(xd[index])
    fancy = any(isinstance(i, (np.ndarray, list)) for i in
                (index if isinstance(index, tuple) else (index,)))

    def vjp(g):
        gx = np.zeros_like(xd)
        if fancy:
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return record(out, (x,), vjp)


def take(x, indices, axis=0) -> Tensor:
    """Gather along ``axis`` with repeated indices allowed."""
    xd = _d(x)
    indices = np.asarray(indices)
    out = Tensor(np.take(xd, indices, axis=axis))

    def vjp(g):
        gx = np.zeros_like(xd)
        moved = np.moveaxis(gx, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (gx,)

    return record(out, (x,), vjp)


def concat(tensors, axis=0) -> Tensor:
    datas = [_d(t) for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    out = Tensor(np.concatenate(datas, axis=axis))

    def vjp(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return record(out, tuple(tensors), vjp)


def roll(x, shifts, axes) -> Tensor:
    out = Tensor(np.roll(_d(x), shifts, axes))
    neg = tuple(-s for s in shifts)
    return record(out, (x,), lambda g: (np.roll(g, neg, axes),))


def pad_reflect(x, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad the bottom and right edges of an (n, c, h, w) tensor."""
    xd = _d(x)
    if pad_h == 0 and pad_w == 0:
        return x if isinstance(x, Tensor) else Tensor(xd)
    h, w = xd.shape[2], xd.shape[3]
    rows = np.pad(np.arange(h), (0, pad_h), mode="reflect")
    cols = np.pad(np.arange(w), (0, pad_w), mode="reflect")
    out = Tensor(xd[:, :, rows][:, :, :, cols])

    def vjp(g):
        gr = g[:, :, :h, :].copy()
        if pad_h:
            np.add.at(gr, (slice(None), slice(None), rows[h:]), g[:, :, h:, :])
        gx = gr[:, :, :, :w].copy()
        if pad_w:
            np.add.at(gx, (slice(None), slice(None), slice(None), cols[w:]), gr[:, :, :, w:])
        return (gx,)

    return record(out, (x,), vjp)


def crop(x, h: int, w: int) -> Tensor:
    xd = _d(x)
    if xd.shape[2] == h and xd.shape[3] == w:
        return x if isinstance(x, Tensor) else Tensor(xd)
    return getitem(x, (slice(None), slice(None), slice(0, h), slice(0, w)))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    ad, bd = _d(a), _d(b)
    out = Tensor(ad @ bd)

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if isinstance(a, Tensor) else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if isinstance(b, Tensor) else None
        return ga, gb

    return record(out, (a, b), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """Token-layout projection: ``x[..., c_in] @ weight.T + bias`` with weight (c_out, c_in)."""
    xd, wd = _d(x), _d(weight)
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    y = x2 @ wd.T
    if bias is not None:
        y = y + _d(bias)
    out = Tensor(y.reshape(lead + (wd.shape[0],)))

    def vjp(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = (g2 @ wd).reshape(xd.shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    return record(out, (x, weight, bias), vjp)


def softmax(x, axis=-1) -> Tensor:
    xd = _d(x)
    z = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(out, (x,), vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-5, axis: int = 1) -> Tensor:
    """Standardize along ``axis`` (population variance), then scale and shift.

    ``gamma``/``beta`` are vectors of length ``x.shape[axis]``.
    """
    xd = _d(x)
    axis = axis % xd.ndim
    bshape = [1] * xd.ndim
    bshape[axis] = xd.shape[axis]
    gd = _d(gamma).reshape(bshape)
    bd = _d(beta).reshape(bshape)
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = Tensor(xhat * gd + bd)
    red = tuple(i for i in range(xd.ndim) if i != axis)

    def vjp(g):
        gxhat = g * gd
        gx = rstd * (gxhat - gxhat.mean(axis=axis, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True))
        ggamma = (g * xhat).sum(axis=red).reshape(_d(gamma).shape)
        gbeta = g.sum(axis=red).reshape(_d(beta).shape)
        return gx, ggamma, gbeta

    return record(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------- convolutions

def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding; weight is (c_out, c_in, kh, kw)."""
    xd, wd = _d(x), _d(weight)
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weight, got {xd.shape}, {wd.shape}")
    n, c, h, w = xd.shape
    co, ci, kh, kw = wd.shape
    if c != ci:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    oh, ow = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be {oh}x{ow}")

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        y = np.einsum("oc,nchw->nohw", wd[:, :, 0, 0], xd, optimize=True)
        if bias is not None:
            y += _d(bias)[None, :, None, None]
        out = Tensor(y)

        def vjp1(g):
            gx = np.einsum("oc,nohw->nchw", wd[:, :, 0, 0], g, optimize=True)
            gw = np.einsum("nohw,nchw->oc", g, xd, optimize=True)[:, :, None, None]
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return gx, gw, gb

        return record(out, (x, weight, bias), vjp1)

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    cols = kernels.im2col(xp, kh, kw, stride)
    y = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        y = y + _d(bias)[None, :, None, None]
    out = Tensor(np.ascontiguousarray(y))

    def vjp(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, wd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        gxp = kernels.col2im(gcols, xp.shape, stride)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(gx), gw, gb

    return record(out, (x, weight, bias), vjp)


def conv_transpose2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Adjoint of :func:`conv2d` (no padding); weight is (c_in, c_out, kh, kw)."""
    xd, wd = _d(x), _d(weight)
    n, c, h, w = xd.shape
    ci, co, kh, kw = wd.shape
    if c != ci:
        raise ShapeError(f"conv_transpose2d channel mismatch: input has {c}, weight expects {ci}")
    oh, ow = (h - 1) * stride + kh, (w - 1) * stride + kw
    gcols = np.tensordot(xd, wd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    y = kernels.col2im(np.ascontiguousarray(gcols), (n, co, oh, ow), stride)
    if bias is not None:
        y += _d(bias)[None, :, None, None]
    out = Tensor(y)

    def vjp(g):
        cols = kernels.im2col(g, kh, kw, stride)
        gx = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(xd, cols, axes=([0, 2, 3], [0, 2, 3]))
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(gx), gw, gb

    return record(out, (x, weight, bias), vjp)


def depthwise_conv2d(x, weight, bias=None, pad: int = 0, pad_w: int | None = None) -> Tensor:
    """One (kh, kw) filter per channel; weight is (c, 1, kh, kw). Stride 1."""
    xd, wd = _d(x), _d(weight)
    n, c, h, w = xd.shape
    if wd.ndim != 4 or wd.shape[0] != c or wd.shape[1] != 1:
        raise ShapeError(f"depthwise weight {wd.shape} does not match {c} channels")
    kh, kw = wd.shape[2], wd.shape[3]
    ph, pw = pad, pad if pad_w is None else pad_w
    oh, ow = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"depthwise output would be {oh}x{ow}")
    dt = np.result_type(xd, wd)
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    xp = xp.astype(dt, copy=False)
    w3 = np.ascontiguousarray(wd[:, 0], dtype=dt)
    y = kernels.depthwise_forward(np.ascontiguousarray(xp), w3, oh, ow)
    if bias is not None:
        y += _d(bias)[None, :, None, None]
    out = Tensor(y)

    def vjp(g):
        gxp, gw = kernels.depthwise_backward(np.ascontiguousarray(g), np.ascontiguousarray(xp), w3)
        gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(gx, dtype=xd.dtype), gw[:, None].astype(wd.dtype, copy=False), gb

    return record(out, (x, weight, bias), vjp)


# ---------------------------------------------------------------- frequency domain

def fft2(x) -> np.ndarray:
    """Unnormalized 2-D DFT over the last two axes. Returns a complex array."""
    return np.fft.fft2(_d(x), axes=(-2, -1))


def ifft2(spec) -> np.ndarray:
    """Inverse of :func:`fft2` (1/(h*w) scaling); returns the real part."""
    return np.fft.ifft2(spec, axes=(-2, -1)).real


def spectral_mix(x, weight, bias) -> Tensor:
    """Re(ifft2(W @ fft2(x) + b)) with complex 1x1 channel mixing.

    ``weight`` is real (2, c_out, c_in) holding (real, imag) parts and ``bias``
    is real (2, c_out). The bias is added at every frequency.
    """
    xd, wd, bd = _d(x), _d(weight), _d(bias)
    if wd.shape[2] != xd.shape[1]:
        raise ShapeError(f"spectral weight expects {wd.shape[2]} channels, got {xd.shape[1]}")
    h, w = xd.shape[2], xd.shape[3]
    W = wd[0] + 1j * wd[1]
    b = bd[0] + 1j * bd[1]
    X = np.fft.fft2(xd, axes=(-2, -1))
    Z = np.einsum("oi,nihw->nohw", W, X, optimize=True) + b[None, :, None, None]
    y = np.fft.ifft2(Z, axes=(-2, -1)).real.astype(xd.dtype, copy=False)
    out = Tensor(y)

    def vjp(g):
        gZ = np.fft.fft2(g, axes=(-2, -1)) / (h * w)
        gW = np.einsum("nohw,nihw->oi", gZ, np.conj(X), optimize=True)
        gb = gZ.sum(axis=(0, 2, 3))
        gX = np.einsum("oi,nohw->nihw", np.conj(W), gZ, optimize=True)
        gx = (np.fft.ifft2(gX, axes=(-2, -1)).real * (h * w)).astype(xd.dtype, copy=False)
        gweight = np.stack([gW.real, gW.imag]).astype(wd.dtype, copy=False)
        gbias = np.stack([gb.real, gb.imag]).astype(bd.dtype, copy=False)
        return gx, gweight, gbias

    return record(out, (x, weight, bias), vjp)


# ---------------------------------------------------------------- losses

def mse(a, b) -> Tensor:
    return mean(square(sub(a, b)))
