"""Contrastive objectives and the self-supervised pretraining loop.

The batch objective pulls the two views of each sample together against all
other in-batch views (normalized temperature-scaled cross entropy); the
negative-free variant matches a predictor output to the detached projection
of the other view (negative cosine similarity, stop-gradient on targets).

Latent batches are row-interleaved: rows 2k and 2k+1 (0-based) are the two
views of sample k.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .augment import RngStream, ViewPipeline, make_views
from .dataio import SignalWindow, WindowSet
from .errors import DataError, NumericError
from .nn import layers
from .nn import tensor as T
from .nn.checkpoint import ModelCheckpoint, make_checkpoint
from .nn.optim import AdamState, adam_step
from .nn.tensor import Tensor, const
from .wavelet import ScaleGrid, Scalogram, scale_grid, scalogram_batch

SIGNAL = "signal"
SCALOGRAM = "scalogram"
NTXENT = "ntxent"
STOPGRAD = "stopgrad"


@dataclass(frozen=True)
class LatentBatch:
    """Row-interleaved latent views: rows 2k and 2k+1 belong to sample k."""

    z: np.ndarray  # (2N, d)
    tau: float = 0.5

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2 != 0:
            raise DataError("BAD_SHAPE", f"latents must be (2N, d) with N >= 1, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise NumericError("NONFINITE_LOSS", "latent batch contains non-finite values")
        if not self.tau > 0:
            raise DataError("INVALID_PARAMS", "temperature must be positive")
        object.__setattr__(self, "z", z)


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("ZERO_VECTOR", "cosine similarity of a zero vector")
    return float(u @ v / (nu * nv))


def ntxent_pair_loss(i: int, j: int, b: LatentBatch) -> float:
    """Loss of the ordered positive pair (i, j); 0-based row indices.

    The denominator is anchored at row i and sums over all rows k != i.
    """
    z = b.z
    num = np.exp(cosine_sim(z[i], z[j]) / b.tau)
    denom = 0.0
    for k in range(z.shape[0]):
        if k != i:
            denom += np.exp(cosine_sim(z[i], z[k]) / b.tau)
    return float(-np.log(num / denom))


def _pair_partner_mask(n_rows: int, dtype) -> np.ndarray:
    mask = np.zeros((n_rows, n_rows), dtype=dtype)
    for i in range(n_rows):
        mask[i, i ^ 1] = 1.0
    return mask


_NORM_FLOOR = 1e-12  # keeps degenerate all-zero rows finite without moving real norms


def ntxent_batch_tensor(z: Tensor, tau: float) -> Tensor:
    """Differentiable batch loss over interleaved latent rows.

    Row norms are clamped at a tiny floor so a degenerate all-zero latent
    (e.g. an augmentation that wiped its view) yields a finite loss instead
    of aborting training; the clamp is far below any real norm.
    """
    data = z.data
    # clamp inside the sqrt: keeps the zero-row backward finite as well
    zn = z / T.power(T.clamp_min(T.tsum(z * z, axis=1, keepdims=True), _NORM_FLOOR**2), 0.5)
    logits = T.matmul(zn, T.transpose(zn)) * const(1.0 / tau, z)
    e = T.exp(logits)
    n_rows = data.shape[0]
    offdiag = Tensor((1.0 - np.eye(n_rows)).astype(data.dtype))
    denom = T.tsum(e * offdiag, axis=1)
    partner = Tensor(_pair_partner_mask(n_rows, data.dtype))
    positive = T.tsum(logits * partner, axis=1)
    return T.mean(T.log(denom) - positive)


def ntxent_batch_loss(b: LatentBatch) -> float:
    """Average of both ordered pair losses over the batch."""
    if np.any(np.sum(b.z.astype(np.float64) ** 2, axis=1) == 0.0):
        raise NumericError("ZERO_VECTOR", "latent batch contains a zero row")
    return float(ntxent_batch_tensor(Tensor(b.z), b.tau).data)


def _normalize_rows(t: Tensor) -> Tensor:
    return t / T.power(T.clamp_min(T.tsum(t * t, axis=-1, keepdims=True), _NORM_FLOOR**2), 0.5)


def _neg_cosine(p: Tensor, target: Tensor) -> Tensor:
    """Negative cosine similarity, averaged over rows; target must be detached."""
    pn = _normalize_rows(p)
    tn = _normalize_rows(target)
    return T.mean(T.tsum(pn * tn, axis=-1)) * const(-1.0, p)


def stopgrad_loss(z1, z2, p1, p2, strict: bool = True) -> Tensor:
    """Symmetric negative-cosine objective with stop-gradient targets.

    Gradients flow through p1/p2 (and through the predictor into its input
    branch); the detached z arguments receive exactly zero gradient.  With
    ``strict=False`` (training loop) zero rows fall back to the clamped
    norm instead of raising.
    """
    z1, z2, p1, p2 = (t if isinstance(t, Tensor) else Tensor(np.atleast_2d(t)) for t in (z1, z2, p1, p2))
    z1, z2, p1, p2 = (T.reshape(t, (-1, t.shape[-1])) for t in (z1, z2, p1, p2))
    if strict:
        for t in (z1, z2, p1, p2):
            if np.any(np.sum(t.data.astype(np.float64) ** 2, axis=-1) == 0.0):
                raise NumericError("ZERO_VECTOR", "zero vector where a direction is required")
    half = const(0.5, p1)
    return (_neg_cosine(p1, z2.detach()) + _neg_cosine(p2, z1.detach())) * half


@dataclass(frozen=True)
class PretrainConfig:
    learner: str  # SIGNAL or SCALOGRAM
    objective: str = NTXENT
    batch_size: int = 128
    epochs: int | None = None  # defaults: signal 150, scalogram 50
    learning_rate: float = 0.001
    tau: float = 0.5
    pipeline: ViewPipeline | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learner not in (SIGNAL, SCALOGRAM):
            raise DataError("INVALID_PARAMS", f"unknown learner {self.learner!r}")
        if self.objective not in (NTXENT, STOPGRAD):
            raise DataError("INVALID_PARAMS", f"unknown objective {self.objective!r}")
        if self.batch_size < 2 or (self.epochs is not None and self.epochs < 1):
            raise DataError("INVALID_PARAMS", "batch_size >= 2 and epochs >= 1 required")
        if not self.tau > 0:
            raise DataError("INVALID_PARAMS", "temperature must be positive")
        if self.epochs is None:
            object.__setattr__(self, "epochs", 150 if self.learner == SIGNAL else 50)


GUARD_CHECKS = 0  # number of enforced split-provenance audits (tests read this)


def _check_guard(windows, allowed, context: str):
    if allowed is None:
        return
    global GUARD_CHECKS
    GUARD_CHECKS += 1
    for w in windows:
        if w.subject_id not in allowed:
            raise DataError(
                "SPLIT_LEAK", f"{context}: subject {w.subject_id} outside the training split"
            )


def encoder_architecture(learner: str) -> str:
    return "signal_encoder" if learner == SIGNAL else "scalogram_encoder"


def pretrain(
    cfg: PretrainConfig,
    windows: WindowSet,
    grid: ScaleGrid | None = None,
    run_dir=None,
    subject_guard=None,
    dtype=np.float32,
) -> ModelCheckpoint:
    """Self-supervised pretraining of one learner; returns the checkpoint.

    Deterministic for a fixed config: initialization, epoch shuffles and
    per-(epoch, sample) view streams are all seed-derived.  The last
    incomplete batch of each epoch is dropped (batch composition is part of
    the objective's semantics).
    """
    items = list(windows.windows)
    if len(items) < cfg.batch_size:
        raise DataError(
            "INSUFFICIENT_DATA",
            f"need at least batch_size={cfg.batch_size} windows, got {len(items)}",
        )
    if cfg.pipeline is None or not cfg.pipeline.steps:
        raise DataError("EMPTY_PIPELINE", "pretraining requires an augmentation pipeline")
    _check_guard(items, subject_guard, "pretrain")

    if cfg.learner == SCALOGRAM:
        if grid is None:
            grid = scale_grid(dt=1.0 / windows.sample_rate_hz)
        cache = scalogram_batch(items, grid).astype(dtype)
        samples = [Scalogram(cache[i], items[i]) for i in range(len(items))]
        in_shape = cache.shape[1:]
    else:
        samples = [
            SignalWindow(np.asarray(w.values, dtype=dtype), w.subject_id, w.label, w.source_offset)
            for w in items
        ]
        in_shape = (windows.window_len, 3)

    encoder = layers.init_params(encoder_architecture(cfg.learner), cfg.seed, dtype=dtype)
    proj = layers.init_params("projection_head", cfg.seed, dtype=dtype)
    params = {f"encoder.{n}": t for n, t in encoder.params().items()}
    params.update({f"proj.{n}": t for n, t in proj.params().items()})
    predictor = None
    if cfg.objective == STOPGRAD:
        predictor = layers.init_params("predictor_head", cfg.seed, dtype=dtype)
        params.update({f"pred.{n}": t for n, t in predictor.params().items()})
    decay = {f"encoder.{n}" for n in encoder.conv_weight_names}

    state = AdamState(lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
    view_root = RngStream(seed=cfg.seed, stream_id=2)

    loss_curve: list[float] = []
    std_curve: list[float] = []
    log_fh = None
    if run_dir is not None:
        import os

        os.makedirs(run_dir, exist_ok=True)
        log_fh = open(os.path.join(run_dir, "metrics.jsonl"), "w", encoding="utf-8")
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(samples))
            epoch_losses = []
            epoch_std = []
            for start in range(0, len(samples) - cfg.batch_size + 1, cfg.batch_size):
                batch_idx = order[start : start + cfg.batch_size]
                _check_guard([items[i] for i in batch_idx], subject_guard, "pretrain batch")
                vi = np.empty((len(batch_idx),) + in_shape, dtype=dtype)
                vj = np.empty_like(vi)
                for pos, idx in enumerate(batch_idx):
                    a, b = make_views(samples[idx], cfg.pipeline, view_root.child(epoch, int(idx)))
                    vi[pos] = a.pixels if cfg.learner == SCALOGRAM else a.values
                    vj[pos] = b.pixels if cfg.learner == SCALOGRAM else b.values

                for t in params.values():
                    t.grad = None
                if cfg.objective == NTXENT:
                    x = np.empty((2 * len(batch_idx),) + in_shape, dtype=dtype)
                    x[0::2] = vi
                    x[1::2] = vj
                    e = encoder(Tensor(x))
                    loss = ntxent_batch_tensor(proj(e), cfg.tau)
                    embed_rows = e.data
                else:
                    e1 = encoder(Tensor(vi))
                    e2 = encoder(Tensor(vj))
                    z1 = proj(e1)
                    z2 = proj(e2)
                    loss = stopgrad_loss(z1, z2, predictor(z1), predictor(z2), strict=False)
                    embed_rows = np.concatenate([e1.data, e2.data], axis=0)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(
                        "NONFINITE_LOSS",
                        f"non-finite loss at epoch {epoch}, batch start {start}: {value}",
                    )
                loss.backward()
                grads = {n: t.grad for n, t in params.items() if t.grad is not None}
                adam_step(params, grads, state, decay)
                epoch_losses.append(value)
                norms = np.linalg.norm(embed_rows.astype(np.float64), axis=1, keepdims=True)
                norms[norms == 0.0] = 1.0
                epoch_std.append(float(np.std(embed_rows / norms, axis=0).mean()))
            loss_curve.append(float(np.mean(epoch_losses)))
            std_curve.append(float(np.min(epoch_std)))
            if log_fh is not None:
                log_fh.write(
                    json.dumps(
                        {
                            "epoch": epoch,
                            "mean_loss": loss_curve[-1],
                            "wall_time_s": time.perf_counter() - t0,
                        }
                    )
                    + "\n"
                )
                log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()

    weights = {name: t.data for name, t in params.items()}
    extras = {"learner": cfg.learner, "input_shape": list(in_shape)}
    if cfg.learner == SCALOGRAM:
        extras["scale_grid"] = grid.to_dict()
    return make_checkpoint(
        architecture=f"{cfg.learner}_{cfg.objective}",
        weights=weights,
        label_map=None,
        hparams={
            "objective": cfg.objective,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "learning_rate": cfg.learning_rate,
            "tau": cfg.tau,
            "pipeline_mode": cfg.pipeline.mode,
        },
        seed=cfg.seed,
        history={"loss_curve": loss_curve, "embed_std": std_curve},
        extras=extras,
    )
