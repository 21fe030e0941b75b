"""Convolution kernel backend selection.

The compiled extension is preferred when importable; the numpy lane is the
fallback.  Set ``DUOHAR_KERNELS=python`` to force the fallback or
``DUOHAR_KERNELS=cython`` to require the extension.  All entry points
normalize dtype/contiguity here so both lanes see identical inputs.
"""

from __future__ import annotations

import os

import numpy as np

from . import py_backend

_requested = os.environ.get("DUOHAR_KERNELS", "auto").lower()
if _requested not in ("auto", "python", "cython"):
    raise ImportError(f"DUOHAR_KERNELS must be auto|python|cython, got {_requested!r}")

_impl = py_backend
BACKEND = "python"
if _requested in ("auto", "cython"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise


def _prep(*arrays):
    dtype = np.result_type(*[a.dtype for a in arrays])
    if dtype not in (np.float32, np.float64):
        dtype = np.float64
    return [np.ascontiguousarray(a, dtype=dtype) for a in arrays]


def conv1d_forward(x, w, b):
    x, w = _prep(x, w)
    b = np.ascontiguousarray(b, dtype=x.dtype)
    if x.shape[1] < w.shape[0]:
        raise ValueError(f"input length {x.shape[1]} shorter than kernel {w.shape[0]}")
    return _impl.conv1d_forward(x, w, b)


def conv1d_backward(x, w, gout, need_gx=True, need_gw=True):
    x, w, gout = _prep(x, w, gout)
    return _impl.conv1d_backward(x, w, gout, need_gx, need_gw)


def conv2d_forward(x, w, b):
    x, w = _prep(x, w)
    b = np.ascontiguousarray(b, dtype=x.dtype)
    if x.shape[1] < w.shape[0] or x.shape[2] < w.shape[1]:
        raise ValueError(f"input {x.shape[1:3]} smaller than kernel {w.shape[:2]}")
    return _impl.conv2d_forward(x, w, b)


def conv2d_backward(x, w, gout, need_gx=True, need_gw=True):
    x, w, gout = _prep(x, w, gout)
    return _impl.conv2d_backward(x, w, gout, need_gx, need_gw)
