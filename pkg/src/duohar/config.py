"""Experiment configuration: YAML schema, validation, overrides, sweeps.

Configs are plain YAML validated against an explicit key tree before any
computation; unknown keys are rejected by full dotted path.  Command-line
overrides use dotted keys (``--set pretrain.tau=0.1``), and a config may
declare a ``sweep`` list of override maps that expands into one run each
(how the per-augmentation ablations are scripted).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import yaml

from .augment import TemporalKind, TemporalSpec, TimeFreqKind, TimeFreqSpec, ViewPipeline
from .contrastive import NTXENT, SCALOGRAM, SIGNAL, STOPGRAD, PretrainConfig
from .dataio import ClassSpec, RecordingSet, Scheme, WindowSet, load_csv, synth_dataset, window
from .downstream import FinetuneConfig
from .errors import ConfigError
from .wavelet import ScaleGrid, scale_grid

FUSION_MODES = ("score", "feature", "signal-only", "scalogram-only")

_CLASS_KEYS = {"label", "freq_hz", "amplitude", "offset"}
_TEMPORAL_KEYS = {
    "kind",
    "prob",
    "noise_std",
    "scale_mean",
    "scale_std",
    "permutation_segments",
    "warp_knots",
    "warp_std",
}
_TIMEFREQ_KEYS = {
    "kind",
    "prob",
    "brightness",
    "contrast",
    "saturation",
    "hue",
    "grayscale_prob",
    "crop_area",
    "crop_aspect",
}

# None marks a list of dicts validated separately; a set is the allowed keys.
_SCHEMA = {
    "corpus": {"csv": {}, "rate_hz": {}, "window_len": {}, "stride": {}},
    "synth": {
        "num_subjects": {},
        "windows_per_subject_class": {},
        "noise_std": {},
        "seed": {},
        "classes": _CLASS_KEYS,
    },
    "split": {"scheme": {}, "seed": {}, "val_fraction": {}, "test_fraction": {}},
    "wavelet": {"n_scales": {}, "f_min_hz": {}, "f_max_hz": {}},
    "augment": {"mode": {}, "temporal": _TEMPORAL_KEYS, "timefreq": _TIMEFREQ_KEYS},
    "pretrain": {
        "objective": {},
        "tau": {},
        "batch_size": {},
        "epochs_signal": {},
        "epochs_scalogram": {},
        "learning_rate": {},
        "seed": {},
        "scope": {},
    },
    "finetune": {
        "epochs_signal": {},
        "epochs_scalogram": {},
        "batch_size": {},
        "learning_rate": {},
        "unfreeze_last_conv": {},
        "patience": {},
        "seed": {},
    },
    "fusion": {"mode": {}, "weight": {}},
    "output_dir": {},
    "jobs": {},
    "sweep": None,
}

DEFAULTS = {
    "corpus": {"csv": None, "rate_hz": 50.0, "window_len": 128, "stride": 64},
    "synth": {
        "num_subjects": 8,
        "windows_per_subject_class": 6,
        "noise_std": 0.05,
        "seed": 7,
        "classes": [
            {"label": "low", "freq_hz": [1.5, 2.0, 2.5]},
            {"label": "mid", "freq_hz": [4.0, 4.5, 5.0]},
            {"label": "high", "freq_hz": [7.0, 7.5, 8.0]},
        ],
    },
    "split": {"scheme": "scheme2", "seed": 11, "val_fraction": 0.2, "test_fraction": 0.2},
    "wavelet": {"n_scales": 128, "f_min_hz": 0.5, "f_max_hz": 20.0},
    "augment": {
        "mode": "composed",
        "temporal": [
            {"kind": "noise", "prob": 0.5},
            {"kind": "scale", "prob": 0.5},
            {"kind": "negation", "prob": 0.5},
            {"kind": "time_flip", "prob": 0.5},
            {"kind": "channel_shuffle", "prob": 0.5},
            {"kind": "permutation", "prob": 0.5},
            {"kind": "rotation", "prob": 0.5},
            {"kind": "time_warp", "prob": 0.5},
        ],
        "timefreq": [
            {"kind": "color_distort", "prob": 0.5},
            {"kind": "crop_resize", "prob": 0.5},
            {"kind": "flip", "prob": 0.5},
        ],
    },
    "pretrain": {
        "objective": "ntxent",
        "tau": 0.5,
        "batch_size": 128,
        "epochs_signal": 150,
        "epochs_scalogram": 50,
        "learning_rate": 0.001,
        "seed": 3,
        "scope": "fold-train",
    },
    "finetune": {
        "epochs_signal": 70,
        "epochs_scalogram": 50,
        "batch_size": 128,
        "learning_rate": 0.001,
        "unfreeze_last_conv": True,
        "patience": 10,
        "seed": 5,
    },
    "fusion": {"mode": "score", "weight": 0.5},
    "output_dir": "runs/experiment",
    "jobs": 1,
    "sweep": [],
}


def _check_keys(data: dict, schema: dict, prefix: str = ""):
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError("CONFIG_INVALID", f"unknown config key: {path}")
        sub = schema[key]
        if sub is None:
            continue
        if isinstance(sub, set):
            if not isinstance(value, list):
                raise ConfigError("CONFIG_INVALID", f"{path} must be a list")
            for i, item in enumerate(value):
                if not isinstance(item, dict):
                    raise ConfigError("CONFIG_INVALID", f"{path}[{i}] must be a mapping")
                for k in item:
                    if k not in sub:
                        raise ConfigError("CONFIG_INVALID", f"unknown config key: {path}[{i}].{k}")
        elif isinstance(sub, dict) and sub:
            if not isinstance(value, dict):
                raise ConfigError("CONFIG_INVALID", f"{path} must be a mapping")
            _check_keys(value, sub, prefix=f"{path}.")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_overrides(data: dict, pairs) -> dict:
    """Apply ``dotted.path=value`` overrides; values parse as YAML scalars."""
    out = copy.deepcopy(data)
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError("CONFIG_INVALID", f"override {pair!r} is not key=value")
        key, text = pair.split("=", 1)
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("CONFIG_INVALID", f"override {pair!r}: {exc}") from exc
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return out


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(
        json.dumps(resolved, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


def _range(value, name: str) -> tuple[float, float]:
    try:
        lo, hi = value
    except (TypeError, ValueError) as exc:
        raise ConfigError("CONFIG_INVALID", f"{name} must be [lo, hi]") from exc
    return (float(lo), float(hi))


def _temporal_spec(item: dict) -> tuple[TemporalSpec, float]:
    kind = item.get("kind")
    try:
        kind = TemporalKind(kind)
    except ValueError as exc:
        raise ConfigError("CONFIG_INVALID", f"unknown temporal kind {kind!r}") from exc
    kwargs = {
        k: item[k]
        for k in ("noise_std", "scale_mean", "scale_std", "permutation_segments", "warp_knots", "warp_std")
        if k in item
    }
    return TemporalSpec(kind=kind, **kwargs), float(item.get("prob", 1.0))


def _timefreq_spec(item: dict) -> tuple[TimeFreqSpec, float]:
    kind = item.get("kind")
    try:
        kind = TimeFreqKind(kind)
    except ValueError as exc:
        raise ConfigError("CONFIG_INVALID", f"unknown time-frequency kind {kind!r}") from exc
    kwargs = {}
    for cfg_key, field in (
        ("brightness", "brightness_range"),
        ("contrast", "contrast_range"),
        ("saturation", "saturation_range"),
        ("hue", "hue_range"),
        ("crop_area", "crop_area_range"),
        ("crop_aspect", "crop_aspect_range"),
    ):
        if cfg_key in item:
            kwargs[field] = _range(item[cfg_key], cfg_key)
    if "grayscale_prob" in item:
        kwargs["grayscale_prob"] = float(item["grayscale_prob"])
    return TimeFreqSpec(kind=kind, **kwargs), float(item.get("prob", 1.0))


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings; ``raw`` is the canonical dict."""

    raw: dict

    def __post_init__(self):
        raw = self.raw
        if raw["augment"]["mode"] not in ("composed", "ablation"):
            raise ConfigError("CONFIG_INVALID", f"augment.mode {raw['augment']['mode']!r}")
        if raw["pretrain"]["objective"] not in (NTXENT, STOPGRAD):
            raise ConfigError("CONFIG_INVALID", f"pretrain.objective {raw['pretrain']['objective']!r}")
        if raw["pretrain"]["scope"] not in ("fold-train", "all"):
            raise ConfigError("CONFIG_INVALID", f"pretrain.scope {raw['pretrain']['scope']!r}")
        if raw["fusion"]["mode"] not in FUSION_MODES:
            raise ConfigError("CONFIG_INVALID", f"fusion.mode {raw['fusion']['mode']!r}")
        try:
            Scheme(raw["split"]["scheme"])
        except ValueError as exc:
            raise ConfigError("CONFIG_INVALID", f"split.scheme {raw['split']['scheme']!r}") from exc
        # construct eagerly so invalid parameter values fail at load time
        self.pipelines()

    @property
    def scheme(self) -> Scheme:
        return Scheme(self.raw["split"]["scheme"])

    @property
    def fusion_mode(self) -> str:
        return self.raw["fusion"]["mode"]

    @property
    def output_dir(self) -> str:
        return self.raw["output_dir"]

    @property
    def jobs(self) -> int:
        return int(self.raw["jobs"])

    def hash(self) -> str:
        return config_hash(self.raw)

    def streams(self) -> tuple[str, ...]:
        mode = self.fusion_mode
        if mode == "signal-only":
            return (SIGNAL,)
        if mode == "scalogram-only":
            return (SCALOGRAM,)
        return (SIGNAL, SCALOGRAM)

    def pipelines(self) -> dict[str, ViewPipeline]:
        aug = self.raw["augment"]
        temporal = tuple(_temporal_spec(item) for item in aug["temporal"])
        timefreq = tuple(_timefreq_spec(item) for item in aug["timefreq"])
        return {
            SIGNAL: ViewPipeline(steps=temporal, mode=aug["mode"]),
            SCALOGRAM: ViewPipeline(steps=timefreq, mode=aug["mode"]),
        }

    def pretrain_config(self, learner: str) -> PretrainConfig:
        p = self.raw["pretrain"]
        epochs = p["epochs_signal"] if learner == SIGNAL else p["epochs_scalogram"]
        return PretrainConfig(
            learner=learner,
            objective=p["objective"],
            batch_size=int(p["batch_size"]),
            epochs=int(epochs),
            learning_rate=float(p["learning_rate"]),
            tau=float(p["tau"]),
            pipeline=self.pipelines()[learner],
            seed=int(p["seed"]),
        )

    def finetune_config(self, stream: str) -> FinetuneConfig:
        f = self.raw["finetune"]
        epochs = f["epochs_signal"] if stream == SIGNAL else f["epochs_scalogram"]
        return FinetuneConfig(
            epochs=int(epochs),
            learning_rate=float(f["learning_rate"]),
            batch_size=int(f["batch_size"]),
            unfreeze_last_conv=bool(f["unfreeze_last_conv"]),
            patience=int(f["patience"]),
            seed=int(f["seed"]),
        )

    def grid(self, sample_rate_hz: float) -> ScaleGrid:
        w = self.raw["wavelet"]
        return scale_grid(
            n_scales=int(w["n_scales"]),
            f_min=float(w["f_min_hz"]),
            f_max=float(w["f_max_hz"]),
            dt=1.0 / sample_rate_hz,
        )

    def synth_recordings(self) -> RecordingSet:
        s = self.raw["synth"]
        classes = [
            ClassSpec(
                label=str(c.get("label", f"c{i}")),
                freq_hz=c["freq_hz"],
                amplitude=c.get("amplitude", 1.0),
                offset=c.get("offset", 0.0),
            )
            for i, c in enumerate(s["classes"])
        ]
        return synth_dataset(
            num_subjects=int(s["num_subjects"]),
            classes=classes,
            windows_per_subject_class=int(s["windows_per_subject_class"]),
            noise_std=float(s["noise_std"]),
            seed=int(s["seed"]),
        )

    def load_windows(self, csv_path=None) -> WindowSet:
        corpus = self.raw["corpus"]
        path = csv_path or corpus["csv"]
        if path:
            rs = load_csv(path, float(corpus["rate_hz"]))
        else:
            rs = self.synth_recordings()
        return window(rs, window_len=int(corpus["window_len"]), stride=int(corpus["stride"]))


def resolve(data: dict | None, overrides=None) -> ExperimentConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("CONFIG_INVALID", "config root must be a mapping")
    _check_keys(data, _SCHEMA)
    merged = _merge(DEFAULTS, data)
    if overrides:
        merged = apply_overrides(merged, overrides)
        _check_keys(merged, _SCHEMA)
    sweeps = merged.get("sweep") or []
    if not isinstance(sweeps, list):
        raise ConfigError("CONFIG_INVALID", "sweep must be a list of override maps")
    return ExperimentConfig(raw=merged)


def load_config(path=None, overrides=None) -> ExperimentConfig:
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError("CONFIG_INVALID", f"{path}: {exc}") from exc
    return resolve(data, overrides)


def expand_sweep(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    """One config per sweep entry (dotted-key override maps); [cfg] if none."""
    entries = cfg.raw.get("sweep") or []
    if not entries:
        return [cfg]
    out = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError("CONFIG_INVALID", f"sweep[{i}] must be a mapping")
        pairs = [f"{k}={json.dumps(v)}" for k, v in entry.items()]
        base = copy.deepcopy(cfg.raw)
        base["sweep"] = []
        merged = apply_overrides(base, pairs)
        _check_keys(merged, _SCHEMA)
        out.append(ExperimentConfig(raw=merged))
    return out
