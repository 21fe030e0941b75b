"""Central finite-difference verification of analytic gradients.

Intended for double-precision parameters and a differentiable scalar loss;
the relative-error floor keeps near-zero gradient pairs from dominating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: int
    checked_coords: int


def _eval(loss_fn) -> float:
    value = loss_fn()
    value = float(value.data if hasattr(value, "data") else value)
    if not np.isfinite(value):
        raise NumericError("NONFINITE_LOSS", f"loss evaluated to {value}")
    return value


def grad_check(
    loss_fn,
    params,
    step: float = 1e-4,
    coords_per_param: int = 8,
    seed: int = 0,
    rel_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` against (f(w+h)-f(w-h))/2h.

    ``loss_fn`` must close over ``params`` (dict name -> Tensor) and rebuild
    the graph on every call.  A random coordinate subset per parameter keeps
    the cost bounded.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(float(loss.data)):
        raise NumericError("NONFINITE_LOSS", f"loss evaluated to {float(loss.data)}")
    loss.backward()
    analytic = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    rng = np.random.default_rng(seed)
    worst = (0.0, "", -1)
    checked = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= coords_per_param else rng.choice(n, coords_per_param, replace=False)
        for i in np.sort(idx):
            original = flat[i]
            flat[i] = original + step
            f_plus = _eval(loss_fn)
            flat[i] = original - step
            f_minus = _eval(loss_fn)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name].reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
            checked += 1
            if rel > worst[0]:
                worst = (rel, name, int(i))
    return GradCheckReport(
        max_rel_error=worst[0],
        worst_param=worst[1],
        worst_index=worst[2],
        checked_coords=checked,
    )
