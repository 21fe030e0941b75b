"""Activity classifiers on top of frozen pretrained encoders, plus fusion.

Fine-tuning freezes the encoder except (optionally) its final convolution
layer, trains a fresh two-layer head with categorical cross-entropy, and
restores the weights of the best validation epoch (early stopping).  Score
fusion averages per-stream class probabilities; feature fusion trains a
small head on concatenated embeddings with both encoders frozen.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .contrastive import _check_guard
from .dataio import SignalWindow, WindowSet
from .errors import DataError, NumericError
from .nn import layers
from .nn import tensor as T
from .nn.checkpoint import ModelCheckpoint, make_checkpoint
from .nn.optim import AdamState, adam_step
from .nn.tensor import Tensor
from .wavelet import ScaleGrid, scale_grid, scalogram_batch

SIGNAL = "signal"
SCALOGRAM = "scalogram"
_EMBED_CHUNK = 64


def cross_entropy(probs, label: int) -> float:
    """-log(probs[label]) for one already-normalized probability vector."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if not 0 <= int(label) < probs.size:
        raise DataError("BAD_LABEL", f"label {label} outside [0, {probs.size})")
    return float(-np.log(probs[int(label)]))


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 70
    learning_rate: float = 0.001
    batch_size: int = 128
    unfreeze_last_conv: bool = True
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise DataError("INVALID_PARAMS", "epochs, patience, batch_size must be >= 1")


@dataclass
class HarModel:
    stream: str
    encoder: layers.Module
    head: layers.HarHead
    label_map: dict[str, int]
    grid: ScaleGrid | None
    source_checkpoint: str
    history: dict


def _model_inputs(model_stream: str, windows, grid: ScaleGrid | None, dtype) -> np.ndarray:
    if model_stream == SCALOGRAM:
        return scalogram_batch(windows, grid).astype(dtype)
    return np.stack([np.asarray(w.values, dtype=dtype) for w in windows])


def _embed(encoder, inputs: np.ndarray) -> np.ndarray:
    chunks = []
    for start in range(0, inputs.shape[0], _EMBED_CHUNK):
        chunks.append(encoder(Tensor(inputs[start : start + _EMBED_CHUNK])).data)
    return np.concatenate(chunks, axis=0)


def _log_softmax_ce(logits: Tensor, onehot: np.ndarray) -> Tensor:
    """Mean cross-entropy from logits (stable log-softmax composition)."""
    wide = T.astype(logits, np.float64)
    shift = wide - Tensor(wide.data.max(axis=1, keepdims=True))
    lse = T.log(T.tsum(T.exp(shift), axis=1, keepdims=True))
    logp = shift - lse
    picked = T.tsum(logp * Tensor(onehot.astype(np.float64)), axis=1)
    return T.mean(picked) * T.const(-1.0, picked)


def _grid_from_checkpoint(ck: ModelCheckpoint, ws: WindowSet) -> ScaleGrid:
    grid_dict = ck.manifest.get("extras", {}).get("scale_grid")
    if grid_dict is not None:
        return ScaleGrid.from_dict(grid_dict)
    return scale_grid(dt=1.0 / ws.sample_rate_hz)


def _labels_array(ws: WindowSet) -> np.ndarray:
    labels = []
    for w in ws.windows:
        if w.label is None:
            raise DataError("LABELS_MISSING", f"window of subject {w.subject_id} has no label")
        labels.append(int(w.label))
    return np.asarray(labels, dtype=np.int64)


def finetune(
    ck: ModelCheckpoint,
    train: WindowSet,
    val: WindowSet,
    cfg: FinetuneConfig,
    subject_guard=None,
    run_dir=None,
    dtype=np.float32,
) -> HarModel:
    """Train a HAR head on a frozen (or last-conv-unfrozen) pretrained encoder."""
    if len(train.windows) == 0:
        raise DataError("INSUFFICIENT_DATA", "no training windows")
    stream = SIGNAL if ck.manifest["architecture"].startswith(SIGNAL) else SCALOGRAM
    label_map = dict(train.label_map)
    num_classes = len(label_map)
    if num_classes < 2:
        raise DataError("LABELS_MISSING", "need at least 2 classes to fine-tune")
    y_train = _labels_array(train)
    y_val = _labels_array(val) if len(val.windows) else np.zeros(0, dtype=np.int64)
    _check_guard(train.windows, subject_guard, "finetune")

    arch = "signal_encoder" if stream == SIGNAL else "scalogram_encoder"
    encoder = layers.init_params(arch, cfg.seed, dtype=dtype)
    encoder.load_state(
        {n: ck.weights[f"encoder.{n}"] for n in encoder.params()}
    )
    encoder.set_trainable(False)
    if cfg.unfreeze_last_conv:
        encoder.set_trainable(True, names=encoder.last_conv_names)
    head = layers.init_params("har_head", cfg.seed, dtype=dtype, num_classes=num_classes)

    grid = _grid_from_checkpoint(ck, train) if stream == SCALOGRAM else None
    x_train = _model_inputs(stream, train.windows, grid, dtype)
    x_val = _model_inputs(stream, val.windows, grid, dtype) if len(val.windows) else None

    frozen_encoder = not cfg.unfreeze_last_conv
    if frozen_encoder:
        feat_train = _embed(encoder, x_train)
        feat_val = _embed(encoder, x_val) if x_val is not None else None

    trainable = {f"encoder.{n}": t for n, t in encoder.trainable_params().items()}
    trainable.update({f"head.{n}": t for n, t in head.params().items()})
    decay = {f"encoder.{n}" for n in encoder.last_conv_names if n.endswith(".w")} & set(trainable)
    state = AdamState(lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(3,)))
    eye = np.eye(num_classes)

    def forward_logits(batch_x: np.ndarray, cached_feat=None) -> Tensor:
        if cached_feat is not None:
            e = Tensor(cached_feat)
        else:
            e = encoder(Tensor(batch_x))
        return head.fc2(T.relu(head.fc1(e)))

    def split_loss(x, feats, y) -> float:
        total = 0.0
        for start in range(0, y.size, _EMBED_CHUNK):
            sl = slice(start, start + _EMBED_CHUNK)
            logits = forward_logits(
                None if feats is not None else x[sl],
                cached_feat=feats[sl] if feats is not None else None,
            )
            total += float(_log_softmax_ce(logits, eye[y[sl]]).data) * (min(y.size, start + _EMBED_CHUNK) - start)
        return total / y.size

    best = None  # (val_loss, epoch, snapshot)
    train_curve, val_curve = [], []
    stale = 0
    log_fh = None
    if run_dir is not None:
        import os

        os.makedirs(run_dir, exist_ok=True)
        log_fh = open(os.path.join(run_dir, "metrics.jsonl"), "w", encoding="utf-8")
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(y_train.size)
            losses = []
            for start in range(0, y_train.size, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                _check_guard([train.windows[i] for i in idx], subject_guard, "finetune batch")
                for t in trainable.values():
                    t.grad = None
                logits = forward_logits(
                    x_train[idx] if not frozen_encoder else None,
                    cached_feat=feat_train[idx] if frozen_encoder else None,
                )
                loss = _log_softmax_ce(logits, eye[y_train[idx]])
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError("NONFINITE_LOSS", f"epoch {epoch}: loss {value}")
                loss.backward()
                grads = {n: t.grad for n, t in trainable.items() if t.grad is not None}
                adam_step(trainable, grads, state, decay)
                losses.append(value)
            train_curve.append(float(np.mean(losses)))
            if y_val.size:
                vloss = split_loss(x_val, feat_val if frozen_encoder else None, y_val)
                val_curve.append(vloss)
                if best is None or vloss < best[0]:
                    best = (vloss, epoch, {n: t.data.copy() for n, t in trainable.items()})
                    stale = 0
                else:
                    stale += 1
            if log_fh is not None:
                log_fh.write(
                    json.dumps(
                        {
                            "epoch": epoch,
                            "mean_loss": train_curve[-1],
                            "val_loss": val_curve[-1] if val_curve else None,
                            "wall_time_s": time.perf_counter() - t0,
                        }
                    )
                    + "\n"
                )
                log_fh.flush()
            if y_val.size and stale >= cfg.patience:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    if best is not None:
        for n, t in trainable.items():
            t.data = best[2][n]
    history = {
        "train_loss": train_curve,
        "val_loss": val_curve,
        "best_epoch": None if best is None else best[1],
    }
    return HarModel(
        stream=stream,
        encoder=encoder,
        head=head,
        label_map=label_map,
        grid=grid,
        source_checkpoint=ck.checkpoint_id,
        history=history,
    )


def predict_scores_batch(model: HarModel, windows) -> np.ndarray:
    """Deterministic forward pass; no augmentation at inference."""
    windows = list(windows)
    if not windows:
        return np.zeros((0, model.head.num_classes))
    dtype = next(iter(model.encoder.params().values())).data.dtype
    inputs = _model_inputs(model.stream, windows, model.grid, dtype)
    feats = _embed(model.encoder, inputs)
    return model.head(Tensor(feats)).data


def predict_scores(model: HarModel, w: SignalWindow) -> np.ndarray:
    return predict_scores_batch(model, [w])[0]


def predicted_class(probs) -> int:
    """Argmax with ties broken toward the lower class index."""
    return int(np.argmax(np.asarray(probs)))


def fuse_scores(p_sig, p_sca, weight: float = 0.5) -> np.ndarray:
    """Weighted mean of the two streams' class probabilities (default 0.5/0.5)."""
    p_sig = np.asarray(p_sig, dtype=np.float64)
    p_sca = np.asarray(p_sca, dtype=np.float64)
    if p_sig.shape != p_sca.shape:
        raise DataError("LENGTH_MISMATCH", f"{p_sig.shape} vs {p_sca.shape}")
    return weight * p_sig + (1.0 - weight) * p_sca


def fuse_features(e_sig, e_sca, head: layers.FusionHead) -> np.ndarray:
    """Probabilities from the trained feature-fusion head on concatenated embeddings."""
    e_sig = np.atleast_2d(np.asarray(e_sig))
    e_sca = np.atleast_2d(np.asarray(e_sca))
    if e_sig.shape[0] != e_sca.shape[0]:
        raise DataError("LENGTH_MISMATCH", f"{e_sig.shape} vs {e_sca.shape}")
    out = head(Tensor(e_sig), Tensor(e_sca)).data
    return out[0] if out.shape[0] == 1 and e_sig.shape[0] == 1 else out


def train_fusion_head(
    sig_model: HarModel,
    sca_model: HarModel,
    train: WindowSet,
    val: WindowSet,
    cfg: FinetuneConfig,
    subject_guard=None,
    dtype=np.float32,
) -> layers.FusionHead:
    """Fit the feature-level fusion head with both encoders frozen."""
    if sig_model.label_map != sca_model.label_map:
        raise DataError("LABELS_MISSING", "fusion streams disagree on the label map")
    y_train = _labels_array(train)
    y_val = _labels_array(val) if len(val.windows) else np.zeros(0, dtype=np.int64)
    _check_guard(train.windows, subject_guard, "fusion head")
    num_classes = len(sig_model.label_map)
    head = layers.init_params("fusion_head", cfg.seed, dtype=dtype, num_classes=num_classes)

    def both_feats(ws_windows):
        fs = _embed(sig_model.encoder, _model_inputs(SIGNAL, ws_windows, None, dtype))
        fc = _embed(sca_model.encoder, _model_inputs(SCALOGRAM, ws_windows, sca_model.grid, dtype))
        return fs, fc

    fs_train, fc_train = both_feats(train.windows)
    fs_val, fc_val = both_feats(val.windows) if y_val.size else (None, None)
    trainable = head.params()
    state = AdamState(lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(4,)))
    eye = np.eye(num_classes)

    def logits_for(fs, fc) -> Tensor:
        e = T.concat([Tensor(fs), Tensor(fc)], axis=-1)
        return head.fc2(T.relu(head.fc1(e)))

    best = None
    stale = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(y_train.size)
        for start in range(0, y_train.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            for t in trainable.values():
                t.grad = None
            loss = _log_softmax_ce(logits_for(fs_train[idx], fc_train[idx]), eye[y_train[idx]])
            loss.backward()
            adam_step(trainable, {n: t.grad for n, t in trainable.items() if t.grad is not None}, state)
        if y_val.size:
            vloss = float(_log_softmax_ce(logits_for(fs_val, fc_val), eye[y_val]).data)
            if best is None or vloss < best[0]:
                best = (vloss, {n: t.data.copy() for n, t in trainable.items()})
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best is not None:
        for n, t in trainable.items():
            t.data = best[1][n]
    return head


def model_from_checkpoint(ck: ModelCheckpoint, dtype=np.float32) -> HarModel:
    """Rebuild a fine-tuned model saved by ``model_checkpoint``."""
    extras = ck.manifest.get("extras", {})
    stream = extras.get("stream")
    if stream not in (SIGNAL, SCALOGRAM):
        raise DataError("CORRUPT_MANIFEST", f"not a HAR checkpoint: stream {stream!r}")
    label_map = ck.manifest.get("label_map") or {}
    if len(label_map) < 2:
        raise DataError("LABELS_MISSING", "HAR checkpoint lacks a label map")
    arch = "signal_encoder" if stream == SIGNAL else "scalogram_encoder"
    encoder = layers.init_params(arch, 0, dtype=dtype)
    encoder.load_state({n: ck.weights[f"encoder.{n}"] for n in encoder.params()})
    encoder.set_trainable(False)
    head = layers.init_params("har_head", 0, dtype=dtype, num_classes=len(label_map))
    head.load_state({n: ck.weights[f"head.{n}"] for n in head.params()})
    head.set_trainable(False)
    grid = None
    if "scale_grid" in extras:
        grid = ScaleGrid.from_dict(extras["scale_grid"])
    return HarModel(
        stream=stream,
        encoder=encoder,
        head=head,
        label_map={str(k): int(v) for k, v in label_map.items()},
        grid=grid,
        source_checkpoint=extras.get("source_checkpoint", ""),
        history=ck.manifest.get("history", {}),
    )


def model_checkpoint(model: HarModel, hparams=None) -> ModelCheckpoint:
    """Serialize a fine-tuned model in the shared checkpoint format."""
    weights = {f"encoder.{n}": t.data for n, t in model.encoder.params().items()}
    weights.update({f"head.{n}": t.data for n, t in model.head.params().items()})
    extras = {"stream": model.stream, "source_checkpoint": model.source_checkpoint}
    if model.grid is not None:
        extras["scale_grid"] = model.grid.to_dict()
    return make_checkpoint(
        architecture=f"{model.stream}_har",
        weights=weights,
        label_map=model.label_map,
        hparams=hparams or {},
        history=model.history,
        extras=extras,
    )
