"""Encoders and heads.

Signal encoder: three 1-D valid convolutions (kernels 12/8/8, filters
32/64/96, stride 1) with ReLU, then a global max-pool over time -> 96.
Scalogram encoder: three 2-D valid convolutions (kernels 8/4/4, filters
32/64/96) with ReLU, then a global max-pool over both spatial axes -> 96.
Heads are small MLPs; ReLU everywhere except output layers.

Weights use fan-scaled uniform initialization, limit sqrt(6/(fan_in+fan_out));
biases start at zero.
"""

from __future__ import annotations

import zlib

import numpy as np

from ..errors import DataError
from . import tensor as T
from .tensor import Tensor

EMBED_DIM = 96


def glorot_uniform(shape, fan_in: int, fan_out: int, rng, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Holds an ordered parameter dict; composites merge children with prefixes."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def _register(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]):
        for name, t in self._params.items():
            if name not in arrays:
                raise DataError("SHAPE_MISMATCH", f"missing parameter {name}")
            arr = np.asarray(arrays[name])
            if arr.shape != t.data.shape:
                raise DataError(
                    "SHAPE_MISMATCH",
                    f"{name}: expected {t.data.shape}, got {arr.shape}",
                )
            t.data = arr.astype(t.data.dtype, copy=True)
        return self

    def set_trainable(self, trainable: bool, names=None):
        chosen = set(names) if names is not None else None
        for name, t in self._params.items():
            if chosen is None or name in chosen:
                t.requires_grad = trainable
        return self

    def trainable_params(self) -> dict[str, Tensor]:
        return {n: t for n, t in self._params.items() if t.requires_grad}

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float64, prefix: str = ""):
        super().__init__()
        self.w = self._register(
            f"{prefix}w", glorot_uniform((n_in, n_out), n_in, n_out, rng, dtype)
        )
        self.b = self._register(f"{prefix}b", np.zeros(n_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w) + self.b


class Conv1d(Module):
    def __init__(self, kernel: int, c_in: int, c_out: int, rng, dtype=np.float64, prefix: str = ""):
        super().__init__()
        fan_in = kernel * c_in
        fan_out = kernel * c_out
        self.w = self._register(
            f"{prefix}w", glorot_uniform((kernel, c_in, c_out), fan_in, fan_out, rng, dtype)
        )
        self.b = self._register(f"{prefix}b", np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, kernel: tuple, c_in: int, c_out: int, rng, dtype=np.float64, prefix: str = ""):
        super().__init__()
        kh, kw = kernel
        fan_in = kh * kw * c_in
        fan_out = kh * kw * c_out
        self.w = self._register(
            f"{prefix}w", glorot_uniform((kh, kw, c_in, c_out), fan_in, fan_out, rng, dtype)
        )
        self.b = self._register(f"{prefix}b", np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b)


class _Composite(Module):
    def _adopt(self, child: Module):
        self._params.update(child._params)
        return child


class SignalEncoder(_Composite):
    """(B, L, 3) -> (B, 96); time lengths 128 -> 117 -> 110 -> 103 before pooling."""

    architecture = "signal_encoder"
    conv_weight_names = ("conv1.w", "conv2.w", "conv3.w")
    last_conv_names = ("conv3.w", "conv3.b")

    def __init__(self, rng, dtype=np.float64, kernels=(12, 8, 8), filters=(32, 64, 96), c_in=3):
        super().__init__()
        chans = (c_in,) + tuple(filters)
        self.convs = [
            self._adopt(Conv1d(k, chans[i], chans[i + 1], rng, dtype, prefix=f"conv{i + 1}."))
            for i, k in enumerate(kernels)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = T.relu(conv(h))
        return T.max_pool(h, axes=(1,))


class ScalogramEncoder(_Composite):
    """(B, H, W, 3) -> (B, 96); spatial sizes 128 -> 121 -> 118 -> 115 before pooling."""

    architecture = "scalogram_encoder"
    conv_weight_names = ("conv1.w", "conv2.w", "conv3.w")
    last_conv_names = ("conv3.w", "conv3.b")

    def __init__(self, rng, dtype=np.float64, kernels=(8, 4, 4), filters=(32, 64, 96), c_in=3):
        super().__init__()
        chans = (c_in,) + tuple(filters)
        self.convs = [
            self._adopt(
                Conv2d((k, k), chans[i], chans[i + 1], rng, dtype, prefix=f"conv{i + 1}.")
            )
            for i, k in enumerate(kernels)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = T.relu(conv(h))
        return T.max_pool(h, axes=(1, 2))


class ProjectionHead(_Composite):
    """dense 96 -> ReLU -> dense 96, linear output (cosine sees signed values)."""

    architecture = "projection_head"

    def __init__(self, rng, dtype=np.float64, dim=EMBED_DIM):
        super().__init__()
        self.fc1 = self._adopt(Dense(dim, dim, rng, dtype, prefix="dense1."))
        self.fc2 = self._adopt(Dense(dim, dim, rng, dtype, prefix="dense2."))

    def __call__(self, e: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(e)))


class PredictorHead(ProjectionHead):
    """Predictor for the stop-gradient objective; same 96 -> 96 -> 96 shape."""

    architecture = "predictor_head"


class HarHead(_Composite):
    """dense 256 -> ReLU -> dense C -> softmax probabilities."""

    architecture = "har_head"

    def __init__(self, num_classes: int, rng, dtype=np.float64, dim=EMBED_DIM, hidden=256):
        super().__init__()
        if num_classes < 2:
            raise DataError("INVALID_PARAMS", "need at least 2 classes")
        self.num_classes = num_classes
        self.fc1 = self._adopt(Dense(dim, hidden, rng, dtype, prefix="dense1."))
        self.fc2 = self._adopt(Dense(hidden, num_classes, rng, dtype, prefix="dense2."))

    def __call__(self, e: Tensor) -> Tensor:
        logits = self.fc2(T.relu(self.fc1(e)))
        return T.softmax(logits, axis=-1)


class FusionHead(_Composite):
    """Feature-level fusion: concat(96+96) -> dense 64 -> ReLU -> dense C -> softmax."""

    architecture = "fusion_head"

    def __init__(self, num_classes: int, rng, dtype=np.float64, dim=2 * EMBED_DIM, hidden=64):
        super().__init__()
        if num_classes < 2:
            raise DataError("INVALID_PARAMS", "need at least 2 classes")
        self.num_classes = num_classes
        self.fc1 = self._adopt(Dense(dim, hidden, rng, dtype, prefix="dense1."))
        self.fc2 = self._adopt(Dense(hidden, num_classes, rng, dtype, prefix="dense2."))

    def __call__(self, e_sig: Tensor, e_sca: Tensor) -> Tensor:
        e = T.concat([e_sig, e_sca], axis=-1)
        logits = self.fc2(T.relu(self.fc1(e)))
        return T.softmax(logits, axis=-1)


_ARCHS = {
    "signal_encoder": SignalEncoder,
    "scalogram_encoder": ScalogramEncoder,
    "projection_head": ProjectionHead,
    "predictor_head": PredictorHead,
    "har_head": HarHead,
    "fusion_head": FusionHead,
}


def init_params(arch: str, seed: int, dtype=np.float64, **kwargs) -> Module:
    """Build an architecture with deterministic, seed-derived initialization."""
    cls = _ARCHS.get(arch)
    if cls is None:
        raise DataError("UNKNOWN_ARCH", f"unknown architecture {arch!r}")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(arch.encode()),))
    )
    return cls(rng=rng, dtype=dtype, **kwargs)
