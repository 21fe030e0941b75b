# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (direct loops, OpenMP over independent outputs).

Same contracts as py_backend: valid convolutions, stride 1, channels-last.
Every parallel loop writes disjoint output elements, so results do not
depend on scheduling or thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

ctypedef fused floating:
    float
    double


def conv1d_forward(x, w, b):
    # a length-L signal is a 1 x L image; reshapes are free on contiguous arrays
    out = conv2d_forward(x[:, None], w[None], b)
    return out[:, 0]


def conv1d_backward(x, w, gout, bint need_gx=True, bint need_gw=True):
    gx, gw = conv2d_backward(x[:, None], w[None], gout[:, None], need_gx, need_gw)
    if gx is not None:
        gx = gx[:, 0]
    if gw is not None:
        gw = gw[0]
    return gx, gw


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w, floating[::1] b):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t KH = w.shape[0], KW = w.shape[1], Co = w.shape[3]
    cdef Py_ssize_t Ho = H - KH + 1, Wo = W - KW + 1
    dtype = np.float32 if floating is float else np.float64
    out_np = np.empty((B, Ho, Wo, Co), dtype=dtype)
    out_np[:] = np.asarray(b)
    cdef floating[:, :, :, ::1] out = out_np
    cdef Py_ssize_t idx, b_, oh, ow, kh, kw, ci, co
    cdef floating xv
    for idx in prange(B * Ho, nogil=True, schedule='static'):
        b_ = idx // Ho
        oh = idx % Ho
        for kh in range(KH):
            for kw in range(KW):
                for ci in range(Ci):
                    for ow in range(Wo):
                        xv = x[b_, oh + kh, ow + kw, ci]
                        for co in range(Co):
                            out[b_, oh, ow, co] = out[b_, oh, ow, co] + xv * w[kh, kw, ci, co]
    return out_np


def conv2d_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    floating[:, :, :, ::1] gout, bint need_gx=True, bint need_gw=True):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t KH = w.shape[0], KW = w.shape[1], Co = w.shape[3]
    cdef Py_ssize_t Ho = H - KH + 1, Wo = W - KW + 1
    dtype = np.float32 if floating is float else np.float64
    dummy = np.zeros((1, 1, 1, 1), dtype=dtype)
    gx_np = np.zeros((B, H, W, Ci), dtype=dtype) if need_gx else None
    gw_np = np.zeros((KH, KW, Ci, Co), dtype=dtype) if need_gw else None
    cdef floating[:, :, :, ::1] gx = gx_np if need_gx else dummy
    cdef floating[:, :, :, ::1] gw = gw_np if need_gw else dummy
    cdef Py_ssize_t idx, b_, h, ww, oh, ow, kh, kw, ci, co, kk
    cdef floating s, xv
    if need_gx:
        for idx in prange(B * H, nogil=True, schedule='static'):
            b_ = idx // H
            h = idx % H
            for kh in range(KH):
                oh = h - kh
                if 0 <= oh < Ho:
                    for ww in range(W):
                        for kw in range(KW):
                            ow = ww - kw
                            if 0 <= ow < Wo:
                                for ci in range(Ci):
                                    s = 0
                                    for co in range(Co):
                                        s = s + gout[b_, oh, ow, co] * w[kh, kw, ci, co]
                                    gx[b_, h, ww, ci] = gx[b_, h, ww, ci] + s
    if need_gw:
        for kk in prange(KH * KW, nogil=True, schedule='static'):
            kh = kk // KW
            kw = kk % KW
            for b_ in range(B):
                for oh in range(Ho):
                    for ow in range(Wo):
                        for ci in range(Ci):
                            xv = x[b_, oh + kh, ow + kw, ci]
                            for co in range(Co):
                                gw[kh, kw, ci, co] = gw[kh, kw, ci, co] + xv * gout[b_, oh, ow, co]
    return gx_np, gw_np
