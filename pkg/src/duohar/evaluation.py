"""Metrics and the cross-validation / transfer experiment drivers.

Weighted F1 sums per-class F1 weighted by support (zero-denominator class
F1 is defined as 0); Cohen's kappa is (Acc_T - Acc_R) / (1 - Acc_R) with
Acc_R the matched-marginal chance agreement.  Scheme 1 runs 5 subject-
disjoint folds and reports mean and standard deviation; Scheme 2 runs one
fold.  Pretraining is refit per fold on that fold's training subjects
unless the permissive "all" scope or a shared transfer checkpoint is used.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import contrastive, downstream
from .config import ExperimentConfig
from .contrastive import SCALOGRAM, SIGNAL
from .dataio import SplitPlan, WindowSet, make_splits, split_windows
from .downstream import HarModel
from .errors import DataError
from .kernels import BACKEND
from .nn.checkpoint import ModelCheckpoint
from .nn.tensor import Tensor

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64; rows = true class, columns = predicted

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError("BAD_SHAPE", f"confusion matrix must be square, got {counts.shape}")
        if np.any(counts < 0):
            raise DataError("INDEX_OUT_OF_RANGE", "negative confusion counts")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(preds, labels, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.size != labels.size:
        raise DataError("LENGTH_MISMATCH", f"{preds.size} predictions vs {labels.size} labels")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(labels, preds):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise DataError("INDEX_OUT_OF_RANGE", f"class index ({t}, {p}) outside [0, {num_classes})")
        counts[t, p] += 1
    return ConfusionMatrix(counts)


def accuracy(m: ConfusionMatrix) -> float:
    if m.total == 0:
        raise DataError("EMPTY_MATRIX", "no evaluated windows")
    return float(np.trace(m.counts) / m.total)


def weighted_f1(m: ConfusionMatrix) -> float:
    """Support-weighted mean of per-class F1 (zero-support classes carry no weight)."""
    if m.total == 0:
        raise DataError("EMPTY_MATRIX", "no evaluated windows")
    counts = m.counts.astype(np.float64)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    diag = np.diag(counts)
    out = 0.0
    for c in range(counts.shape[0]):
        if support[c] == 0:
            continue
        precision = diag[c] / predicted[c] if predicted[c] > 0 else 0.0
        recall = diag[c] / support[c]
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        out += (support[c] / m.total) * f1
    return float(out)


def cohen_kappa(m: ConfusionMatrix) -> float:
    """Chance-corrected agreement (Acc_T - Acc_R) / (1 - Acc_R)."""
    if m.total == 0:
        raise DataError("EMPTY_MATRIX", "no evaluated windows")
    counts = m.counts.astype(np.float64)
    n = m.total
    acc_t = np.trace(counts) / n
    acc_r = float(np.sum(counts.sum(axis=1) * counts.sum(axis=0)) / (n * n))
    if acc_r >= 1.0:
        raise DataError("DEGENERATE", "single class on both axes; kappa undefined")
    return float((acc_t - acc_r) / (1.0 - acc_r))


@dataclass(frozen=True)
class FoldMetrics:
    fold_index: int
    weighted_f1: float
    kappa: float
    accuracy: float
    confusion: list
    n_test_windows: int
    per_stream_f1: dict
    checkpoint_ids: dict

    def to_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "weighted_f1": self.weighted_f1,
            "kappa": self.kappa,
            "accuracy": self.accuracy,
            "confusion": self.confusion,
            "n_test_windows": self.n_test_windows,
            "per_stream_f1": self.per_stream_f1,
            "checkpoint_ids": self.checkpoint_ids,
        }


@dataclass(frozen=True)
class MetricsReport:
    scheme: str
    folds: tuple
    aggregate: dict
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "scheme": self.scheme,
            "folds": [f.to_dict() for f in self.folds],
            "aggregate": self.aggregate,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    def render_table(self) -> str:
        lines = [f"{'fold':>4}  {'weighted_f1':>11}  {'kappa':>7}  {'accuracy':>8}  {'n_test':>6}"]
        for f in self.folds:
            lines.append(
                f"{f.fold_index:>4}  {f.weighted_f1:>11.4f}  {f.kappa:>7.4f}"
                f"  {f.accuracy:>8.4f}  {f.n_test_windows:>6}"
            )
        agg = self.aggregate
        lines.append(
            f"{'mean':>4}  {agg['weighted_f1']['mean']:>11.4f}  {agg['kappa']['mean']:>7.4f}"
            f"  {agg['accuracy']['mean']:>8.4f}"
        )
        lines.append(
            f"{'std':>4}  {agg['weighted_f1']['std']:>11.4f}  {agg['kappa']['std']:>7.4f}"
            f"  {agg['accuracy']['std']:>8.4f}"
        )
        return "\n".join(lines)


def _aggregate(folds) -> dict:
    out = {}
    for name in ("weighted_f1", "kappa", "accuracy"):
        values = np.asarray([getattr(f, name) for f in folds], dtype=np.float64)
        out[name] = {"mean": float(values.mean()), "std": float(values.std())}
    return out


def _fold_dir(run_dir, fold_index: int):
    if run_dir is None:
        return None
    path = os.path.join(run_dir, f"fold{fold_index}")
    os.makedirs(path, exist_ok=True)
    return path


def _run_fold(
    fold_index: int,
    fold,
    ws: WindowSet,
    cfg: ExperimentConfig,
    pretrained: dict | None,
    run_dir,
) -> FoldMetrics:
    train_ws, val_ws, test_ws = split_windows(ws, fold)
    if not train_ws.windows or not test_ws.windows:
        raise DataError("INSUFFICIENT_DATA", f"fold {fold_index}: empty train or test split")
    guard = set(fold.train_subjects) | set(fold.val_subjects)
    train_guard = set(fold.train_subjects)
    fold_dir = _fold_dir(run_dir, fold_index)

    grid = cfg.grid(ws.sample_rate_hz)
    models: dict[str, HarModel] = {}
    checkpoint_ids: dict[str, str] = {}
    for stream in cfg.streams():
        if pretrained is not None:
            ck = pretrained[stream]
        else:
            scope_ws = train_ws if cfg.raw["pretrain"]["scope"] == "fold-train" else ws
            scope_guard = train_guard if cfg.raw["pretrain"]["scope"] == "fold-train" else None
            ck = contrastive.pretrain(
                cfg.pretrain_config(stream),
                scope_ws,
                grid=grid if stream == SCALOGRAM else None,
                run_dir=None if fold_dir is None else os.path.join(fold_dir, f"pretrain_{stream}"),
                subject_guard=scope_guard,
            )
        checkpoint_ids[f"pretrain_{stream}"] = ck.checkpoint_id
        models[stream] = downstream.finetune(
            ck,
            train_ws,
            val_ws,
            cfg.finetune_config(stream),
            subject_guard=train_guard,
            run_dir=None if fold_dir is None else os.path.join(fold_dir, f"finetune_{stream}"),
        )

    fusion_head = None
    if cfg.fusion_mode == "feature":
        fusion_head = downstream.train_fusion_head(
            models[SIGNAL],
            models[SCALOGRAM],
            train_ws,
            val_ws,
            cfg.finetune_config(SIGNAL),
            subject_guard=train_guard,
        )

    labels = [w.label for w in test_ws.windows]
    stream_scores = {
        stream: downstream.predict_scores_batch(models[stream], test_ws.windows)
        for stream in cfg.streams()
    }
    per_stream_f1 = {}
    num_classes = ws.num_classes()
    for stream, scores in stream_scores.items():
        preds = [downstream.predicted_class(p) for p in scores]
        per_stream_f1[stream] = weighted_f1(confusion(preds, labels, num_classes))

    if cfg.fusion_mode == "score":
        fused = downstream.fuse_scores(
            stream_scores[SIGNAL], stream_scores[SCALOGRAM], float(cfg.raw["fusion"]["weight"])
        )
    elif cfg.fusion_mode == "feature":
        dtype = np.float32
        fs = downstream._embed(
            models[SIGNAL].encoder, downstream._model_inputs(SIGNAL, test_ws.windows, None, dtype)
        )
        fc = downstream._embed(
            models[SCALOGRAM].encoder,
            downstream._model_inputs(SCALOGRAM, test_ws.windows, models[SCALOGRAM].grid, dtype),
        )
        fused = fusion_head(Tensor(fs), Tensor(fc)).data
    else:
        fused = stream_scores[cfg.streams()[0]]

    preds = [downstream.predicted_class(p) for p in fused]
    matrix = confusion(preds, labels, num_classes)
    return FoldMetrics(
        fold_index=fold_index,
        weighted_f1=weighted_f1(matrix),
        kappa=cohen_kappa(matrix),
        accuracy=accuracy(matrix),
        confusion=matrix.counts.tolist(),
        n_test_windows=len(test_ws.windows),
        per_stream_f1=per_stream_f1,
        checkpoint_ids=checkpoint_ids,
    )


def run_scheme(
    plan: SplitPlan,
    ws: WindowSet,
    cfg: ExperimentConfig,
    run_dir=None,
    pretrained: dict | None = None,
    jobs: int = 1,
) -> MetricsReport:
    """Pretrain / fine-tune / evaluate each fold of the plan and aggregate."""
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
    folds = []
    if jobs > 1 and len(plan.folds) > 1:
        # spawn, not fork: forked children inherit locked OpenMP/BLAS thread
        # state from the parent and deadlock at their first parallel region
        import multiprocessing
        from concurrent.futures import ProcessPoolExecutor

        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            futures = [
                pool.submit(_run_fold, i, fold, ws, cfg, pretrained, run_dir)
                for i, fold in enumerate(plan.folds)
            ]
            folds = [f.result() for f in futures]
    else:
        for i, fold in enumerate(plan.folds):
            folds.append(_run_fold(i, fold, ws, cfg, pretrained, run_dir))
    provenance = {
        "config_hash": cfg.hash(),
        "split_seed": plan.seed,
        "scheme": plan.scheme.value,
        "backend": BACKEND,
        "checkpoint_ids": {f"fold{f.fold_index}": f.checkpoint_ids for f in folds},
    }
    report = MetricsReport(
        scheme=plan.scheme.value,
        folds=tuple(folds),
        aggregate=_aggregate(folds),
        provenance=provenance,
    )
    if run_dir is not None:
        report.save(os.path.join(run_dir, "metrics_report.json"))
    return report


def transfer_protocol(
    pretrain_ws: WindowSet,
    target_ws: WindowSet,
    cfg: ExperimentConfig,
    run_dir=None,
) -> MetricsReport:
    """Pretrain once on one corpus, fine-tune heads and evaluate on another.

    The pretraining corpus is used whole (all subjects, labels ignored); the
    same checkpoints are reused by every target fold.
    """
    if pretrain_ws.window_len != target_ws.window_len:
        raise DataError(
            "WINDOW_MISMATCH",
            f"window length {pretrain_ws.window_len} vs {target_ws.window_len}",
        )
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
    grid = cfg.grid(pretrain_ws.sample_rate_hz)
    pretrained = {}
    for stream in cfg.streams():
        ck = contrastive.pretrain(
            cfg.pretrain_config(stream),
            pretrain_ws,
            grid=grid if stream == SCALOGRAM else None,
            run_dir=None if run_dir is None else os.path.join(run_dir, f"pretrain_{stream}"),
        )
        pretrained[stream] = ck
    plan = make_splits(
        target_ws,
        cfg.scheme,
        int(cfg.raw["split"]["seed"]),
        val_fraction=float(cfg.raw["split"]["val_fraction"]),
        test_fraction=float(cfg.raw["split"]["test_fraction"]),
    )
    return run_scheme(plan, target_ws, cfg, run_dir=run_dir, pretrained=pretrained)


def export_embeddings(model: HarModel, windows, path) -> int:
    """One CSV row per window: subject, label, stream tag, 96 embedding values."""
    windows = list(windows)
    dtype = next(iter(model.encoder.params().values())).data.dtype
    feats = (
        downstream._embed(
            model.encoder, downstream._model_inputs(model.stream, windows, model.grid, dtype)
        )
        if windows
        else np.zeros((0, 96))
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        header = ["subject", "label", "stream"] + [f"e{i:02d}" for i in range(feats.shape[1] if windows else 96)]
        fh.write(",".join(header) + "\n")
        for w, row in zip(windows, feats):
            cells = [w.subject_id, "" if w.label is None else str(int(w.label)), model.stream]
            cells += [repr(float(v)) for v in row]
            fh.write(",".join(cells) + "\n")
    return len(windows)
