"""Checkpoint directory format.

A checkpoint is a directory holding:
  manifest.json  UTF-8 JSON, schema-versioned: architecture id, ordered
                 tensor names + shapes, label map, hyperparameters, seed,
                 training history, extras (e.g. the wavelet scale grid),
                 and the SHA-256 of the weight blob.
  weights.bin    little-endian float32 arrays concatenated in manifest order.

Loading validates sizes and the checksum before any weight is handed out.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import StorageError

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"
_REQUIRED_KEYS = ("schema_version", "architecture", "tensors", "blob_sha256")


@dataclass
class ModelCheckpoint:
    manifest: dict
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def checkpoint_id(self) -> str:
        return self.manifest.get("blob_sha256", "")

    def tensor_names(self) -> list[str]:
        return [entry["name"] for entry in self.manifest["tensors"]]


def _blob(weights: dict[str, np.ndarray], order) -> bytes:
    return b"".join(np.ascontiguousarray(weights[name], dtype="<f4").tobytes() for name in order)


def make_checkpoint(
    architecture: str,
    weights: dict[str, np.ndarray],
    label_map=None,
    hparams=None,
    seed=None,
    history=None,
    extras=None,
) -> ModelCheckpoint:
    """Assemble a checkpoint; weights are stored as float32 in dict order."""
    stored = {name: np.ascontiguousarray(arr, dtype=np.float32) for name, arr in weights.items()}
    order = list(stored)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "architecture": architecture,
        "tensors": [{"name": n, "shape": list(stored[n].shape)} for n in order],
        "label_map": label_map,
        "hparams": hparams or {},
        "seed": seed,
        "history": history or {},
        "extras": extras or {},
        "blob_sha256": hashlib.sha256(_blob(stored, order)).hexdigest(),
    }
    return ModelCheckpoint(manifest=manifest, weights=stored)


def save_checkpoint(ck: ModelCheckpoint, path) -> None:
    os.makedirs(path, exist_ok=True)
    order = ck.tensor_names()
    blob = _blob(ck.weights, order)
    digest = hashlib.sha256(blob).hexdigest()
    manifest = dict(ck.manifest)
    manifest["blob_sha256"] = digest
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(path, WEIGHTS_NAME), "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> ModelCheckpoint:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise StorageError("CORRUPT_MANIFEST", f"{manifest_path}: {exc}") from exc
    for key in _REQUIRED_KEYS:
        if key not in manifest:
            raise StorageError("CORRUPT_MANIFEST", f"{manifest_path}: missing key {key!r}")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise StorageError(
            "CORRUPT_MANIFEST", f"unsupported schema version {manifest['schema_version']}"
        )

    shapes = [(e["name"], tuple(int(d) for d in e["shape"])) for e in manifest["tensors"]]
    expected = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in shapes) * 4
    with open(os.path.join(path, WEIGHTS_NAME), "rb") as fh:
        blob = fh.read()
    if len(blob) != expected:
        raise StorageError(
            "SIZE_MISMATCH", f"weight blob is {len(blob)} bytes, manifest declares {expected}"
        )
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise StorageError("CHECKSUM_MISMATCH", "weight blob does not match manifest checksum")

    weights = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        weights[name] = arr.copy()
        offset += count * 4
    return ModelCheckpoint(manifest=manifest, weights=weights)
