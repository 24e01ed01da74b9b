# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled depthwise-convolution and col2im kernels.

Same signatures and accumulation order as ``_numpy``; loops run without the GIL.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

from ._numpy import im2col  # a strided view, nothing to compile

cnp.import_array()

BACKEND = "cython"


def col2im(floating[:, :, :, :, :, :] gcols, out_shape, Py_ssize_t stride):
    cdef Py_ssize_t n = gcols.shape[0], c = gcols.shape[1]
    cdef Py_ssize_t oh = gcols.shape[2], ow = gcols.shape[3]
    cdef Py_ssize_t kh = gcols.shape[4], kw = gcols.shape[5]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros(out_shape, dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, u, v, i, j
    with nogil:
        for u in range(kh):
            for v in range(kw):
                for b in range(n):
                    for ch in range(c):
                        for i in range(oh):
                            for j in range(ow):
                                out[b, ch, i * stride + u, j * stride + v] += gcols[b, ch, i, j, u, v]
    return out_arr


def depthwise_forward(floating[:, :, :, ::1] xp, floating[:, :, ::1] w, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((n, c, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, u, v, i, j
    cdef floating wt
    with nogil:
        for b in range(n):
            for ch in range(c):
                for u in range(kh):
                    for v in range(kw):
                        wt = w[ch, u, v]
                        for i in range(oh):
                            for j in range(ow):
                                out[b, ch, i, j] = out[b, ch, i, j] + xp[b, ch, i + u, j + v] * wt
    return out_arr


def depthwise_backward(floating[:, :, :, ::1] g, floating[:, :, :, ::1] xp, floating[:, :, ::1] w):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t oh = g.shape[2], ow = g.shape[3]
    dtype = np.float32 if floating is float else np.float64
    gxp_arr = np.zeros((n, c, xp.shape[2], xp.shape[3]), dtype=dtype)
    gw_arr = np.zeros((c, kh, kw), dtype=dtype)
    cdef floating[:, :, :, ::1] gxp = gxp_arr
    cdef floating[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, ch, u, v, i, j, j4
    cdef floating wt
    cdef double a0, a1, a2, a3
    j4 = ow - ow % 4
    with nogil:
        for b in range(n):
            for ch in range(c):
                for u in range(kh):
                    for v in range(kw):
                        wt = w[ch, u, v]
                        for i in range(oh):
                            for j in range(ow):
                                gxp[b, ch, i + u, j + v] = gxp[b, ch, i + u, j + v] + g[b, ch, i, j] * wt
        # four interleaved partial sums break the add latency chain
        for ch in range(c):
            for u in range(kh):
                for v in range(kw):
                    a0 = 0.0
                    a1 = 0.0
                    a2 = 0.0
                    a3 = 0.0
                    for b in range(n):
                        for i in range(oh):
                            for j in range(0, j4, 4):
                                a0 = a0 + g[b, ch, i, j] * xp[b, ch, i + u, j + v]
                                a1 = a1 + g[b, ch, i, j + 1] * xp[b, ch, i + u, j + v + 1]
                                a2 = a2 + g[b, ch, i, j + 2] * xp[b, ch, i + u, j + v + 2]
                                a3 = a3 + g[b, ch, i, j + 3] * xp[b, ch, i + u, j + v + 3]
                            for j in range(j4, ow):
                                a0 = a0 + g[b, ch, i, j] * xp[b, ch, i + u, j + v]
                    gw[ch, u, v] = <floating>((a0 + a1) + (a2 + a3))
    return gxp_arr, gw_arr
