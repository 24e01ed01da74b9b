"""Reference numpy kernels. Always importable; the compiled module mirrors this API."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"


def im2col(xp, kh, kw, stride):
    """Strided (n, c, oh, ow, kh, kw) view of an already padded input."""
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if stride != 1:
        cols = cols[:, :, ::stride, ::stride]
    return cols


def col2im(gcols, out_shape, stride):
    """Adjoint of :func:`im2col`. ``gcols`` is (n, c, oh, ow, kh, kw)."""
    n, c, oh, ow, kh, kw = gcols.shape
    out = np.zeros(out_shape, dtype=gcols.dtype)
    hs = stride * (oh - 1) + 1
    ws = stride * (ow - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + hs:stride, j:j + ws:stride] += gcols[:, :, :, :, i, j]
    return out


def depthwise_forward(xp, w, oh, ow):
    """Per-channel correlation; ``xp`` padded (n, c, H, W), ``w`` (c, kh, kw)."""
    c, kh, kw = w.shape
    out = np.zeros((xp.shape[0], c, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + oh, j:j + ow] * w[None, :, i, j, None, None]
    return out


def depthwise_backward(g, xp, w):
    """Returns (grad wrt padded input, grad wrt (c, kh, kw) weight)."""
    c, kh, kw = w.shape
    oh, ow = g.shape[2], g.shape[3]
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + oh, j:j + ow] += g * w[None, :, i, j, None, None]
            gw[:, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i:i + oh, j:j + ow])
    return gxp, gw
