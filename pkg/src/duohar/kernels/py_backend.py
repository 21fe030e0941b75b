"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Valid convolutions, stride 1, channels-last layouts:
  1-D:  x (B, L, Ci),    w (K, Ci, Co)          -> (B, L-K+1, Co)
  2-D:  x (B, H, W, Ci), w (KH, KW, Ci, Co)     -> (B, H-KH+1, W-KW+1, Co)

The 2-D paths process the batch in chunks so the im2col expansion stays
within a bounded working set.  Accumulation order over chunks is fixed, so
results are deterministic.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# soft cap on the number of expanded im2col elements per chunk
_CHUNK_ELEMENTS = 32_000_000


def _chunk_size(per_sample: int) -> int:
    return max(1, _CHUNK_ELEMENTS // max(per_sample, 1))


def conv1d_forward(x, w, b):
    windows = sliding_window_view(x, w.shape[0], axis=1)  # (B, Lo, Ci, K)
    out = np.tensordot(windows, w, axes=([3, 2], [0, 1]))
    out += b
    return out


def conv1d_backward(x, w, gout, need_gx=True, need_gw=True):
    k = w.shape[0]
    gx = gw = None
    if need_gw:
        windows = sliding_window_view(x, k, axis=1)  # (B, Lo, Ci, K)
        gw = np.tensordot(windows, gout, axes=([0, 1], [0, 1]))  # (Ci, K, Co)
        gw = np.ascontiguousarray(gw.transpose(1, 0, 2))
    if need_gx:
        pad = np.zeros((x.shape[0], x.shape[1] + k - 1, gout.shape[2]), dtype=gout.dtype)
        pad[:, k - 1 : k - 1 + gout.shape[1]] = gout
        gwin = sliding_window_view(pad, k, axis=1)  # (B, L, Co, K)
        wf = w[::-1]  # wf[j] = w[K-1-j]
        gx = np.tensordot(gwin, wf, axes=([3, 2], [0, 2]))
    return gx, gw


def conv2d_forward(x, w, b):
    bsz = x.shape[0]
    kh, kw = w.shape[0], w.shape[1]
    ho = x.shape[1] - kh + 1
    wo = x.shape[2] - kw + 1
    out = np.empty((bsz, ho, wo, w.shape[3]), dtype=x.dtype)
    step = _chunk_size(ho * wo * kh * kw * x.shape[3])
    for start in range(0, bsz, step):
        chunk = x[start : start + step]
        windows = sliding_window_view(chunk, (kh, kw), axis=(1, 2))  # (b, Ho, Wo, Ci, KH, KW)
        out[start : start + step] = np.tensordot(windows, w, axes=([3, 4, 5], [2, 0, 1]))
    out += b
    return out


def conv2d_backward(x, w, gout, need_gx=True, need_gw=True):
    bsz = x.shape[0]
    kh, kw = w.shape[0], w.shape[1]
    gx = gw = None
    if need_gw:
        gw = np.zeros(w.shape, dtype=x.dtype)
        step = _chunk_size(gout.shape[1] * gout.shape[2] * kh * kw * x.shape[3])
        for start in range(0, bsz, step):
            windows = sliding_window_view(x[start : start + step], (kh, kw), axis=(1, 2))
            part = np.tensordot(
                windows, gout[start : start + step], axes=([0, 1, 2], [0, 1, 2])
            )  # (Ci, KH, KW, Co)
            gw += part.transpose(1, 2, 0, 3)
    if need_gx:
        gx = np.empty(x.shape, dtype=x.dtype)
        wf = w[::-1, ::-1]  # wf[jh, jw] = w[KH-1-jh, KW-1-jw]
        step = _chunk_size(x.shape[1] * x.shape[2] * kh * kw * gout.shape[3])
        for start in range(0, bsz, step):
            chunk = gout[start : start + step]
            pad = np.zeros(
                (chunk.shape[0], x.shape[1] + kh - 1, x.shape[2] + kw - 1, chunk.shape[3]),
                dtype=chunk.dtype,
            )
            pad[:, kh - 1 : kh - 1 + chunk.shape[1], kw - 1 : kw - 1 + chunk.shape[2]] = chunk
            gwin = sliding_window_view(pad, (kh, kw), axis=(1, 2))  # (b, H, W, Co, KH, KW)
            gx[start : start + step] = np.tensordot(gwin, wf, axes=([3, 4, 5], [3, 0, 1]))
    return gx, gw
