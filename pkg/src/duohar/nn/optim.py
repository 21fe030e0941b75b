"""Adam with bias correction and L2 regularization on convolution weights.

Defaults: lr 0.001, beta1 0.9, beta2 0.999, eps 1e-7.  The L2 term enters
the gradient as 2*lambda*w (lambda=1e-4) for parameter names listed in
``decay`` — convolution weights only, never biases or dense layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

L2_LAMBDA = 1e-4


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    l2_lambda: float = L2_LAMBDA
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, decay=frozenset()):
    """One update over ``params`` (dict name -> Tensor or ndarray), in place.

    Returns (params, state) for call-chaining; arrays are mutated.
    """
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        w = p.data if hasattr(p, "data") else p
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g)
        if g.shape != w.shape:
            raise DataError(
                "SHAPE_MISMATCH", f"{name}: gradient {g.shape} vs parameter {w.shape}"
            )
        if name in decay:
            g = g + (2.0 * state.l2_lambda) * w
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(w)
            state.m[name] = m
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        w -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
