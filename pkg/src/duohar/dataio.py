"""Corpus ingestion, windowing, subject-disjoint splits, synthetic corpora.

Corpus CSV format: UTF-8, header ``subject,label,x,y,z``, one row per sample
at a fixed sampling rate.  Rows are grouped into contiguous (subject, label)
runs; each run becomes one recording.

Label strings are mapped to dense integer indices in lexicographic order at
windowing time; the mapping travels with every checkpoint manifest.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

WINDOW_LEN = 128
CHANNELS = 3
SYNTH_RATE_HZ = 50.0


class Scheme(enum.Enum):
    SCHEME1 = "scheme1"  # user-split 5-fold cross validation
    SCHEME2 = "scheme2"  # single held-out subject split


@dataclass(frozen=True)
class Recording:
    subject_id: str
    label: str
    samples: np.ndarray  # (length, 3), float64
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != CHANNELS or samples.shape[0] < 1:
            raise DataError(
                "MALFORMED_ROW",
                f"recording needs shape (n>=1, {CHANNELS}), got {samples.shape}",
            )
        if not self.sample_rate_hz > 0:
            raise DataError("INVALID_PARAMS", "sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class RecordingSet:
    recordings: tuple[Recording, ...]
    sample_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "recordings", tuple(self.recordings))
        for rec in self.recordings:
            if rec.sample_rate_hz != self.sample_rate_hz:
                raise DataError(
                    "INVALID_PARAMS",
                    "all recordings in a set must share one sample rate",
                )

    def subjects(self) -> list[str]:
        return sorted({rec.subject_id for rec in self.recordings})

    def labels(self) -> list[str]:
        return sorted({rec.label for rec in self.recordings})


@dataclass(frozen=True)
class SignalWindow:
    values: np.ndarray  # (window_len, 3)
    subject_id: str
    label: int | None  # None is legal only in pretraining contexts
    source_offset: int


@dataclass(frozen=True)
class WindowSet:
    """Windows plus the corpus-level bookkeeping produced alongside them."""

    windows: tuple[SignalWindow, ...]
    label_map: dict[str, int]
    skipped_recordings: int
    window_len: int
    stride: int
    sample_rate_hz: float

    def __len__(self):
        return len(self.windows)

    def subjects(self) -> list[str]:
        return sorted({w.subject_id for w in self.windows})

    def num_classes(self) -> int:
        return len(self.label_map)


@dataclass(frozen=True)
class Fold:
    train_subjects: tuple[str, ...]
    val_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    scheme: Scheme
    folds: tuple[Fold, ...]
    seed: int

    def to_json(self) -> str:
        payload = {
            "scheme": self.scheme.value,
            "seed": self.seed,
            "folds": [
                {
                    "train_subjects": list(f.train_subjects),
                    "val_subjects": list(f.val_subjects),
                    "test_subjects": list(f.test_subjects),
                }
                for f in self.folds
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2)


@dataclass(frozen=True)
class ClassSpec:
    """Per-class generator for the synthetic corpus.

    ``freq_hz``, ``amplitude`` and ``offset`` may each be a scalar or a
    3-tuple (one value per accelerometer axis).
    """

    label: str
    freq_hz: tuple[float, float, float]
    amplitude: tuple[float, float, float] = (1.0, 1.0, 1.0)
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "freq_hz", _triple(self.freq_hz))
        object.__setattr__(self, "amplitude", _triple(self.amplitude))
        object.__setattr__(self, "offset", _triple(self.offset))


def _triple(v) -> tuple[float, float, float]:
    if np.isscalar(v):
        return (float(v),) * 3
    t = tuple(float(x) for x in v)
    if len(t) != 3:
        raise DataError("INVALID_SPEC", f"expected scalar or 3 values, got {v!r}")
    return t


CSV_HEADER = ["subject", "label", "x", "y", "z"]


def load_csv(path, expected_rate_hz: float) -> RecordingSet:
    """Parse a corpus CSV into recordings, one per contiguous (subject, label) run."""
    runs = []  # (subject, label, [rows])
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError("EMPTY_FILE", f"{path} is empty")
        if [h.strip() for h in header] != CSV_HEADER:
            raise DataError(
                "MALFORMED_ROW",
                f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}",
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise DataError(
                    "MALFORMED_ROW", f"{path}:{lineno}: expected 5 columns, got {len(row)}"
                )
            subject, label = row[0], row[1]
            try:
                xyz = [float(row[2]), float(row[3]), float(row[4])]
            except ValueError as exc:
                raise DataError("MALFORMED_ROW", f"{path}:{lineno}: {exc}") from exc
            if runs and runs[-1][0] == subject and runs[-1][1] == label:
                runs[-1][2].append(xyz)
            else:
                runs.append((subject, label, [xyz]))
    if not runs:
        raise DataError("EMPTY_FILE", f"{path} contains a header but no samples")
    recordings = tuple(
        Recording(subject, label, np.asarray(rows, dtype=np.float64), expected_rate_hz)
        for subject, label, rows in runs
    )
    return RecordingSet(recordings, expected_rate_hz)


def save_csv(rs: RecordingSet, path) -> None:
    """Inverse of load_csv; used by the synthetic-corpus CLI command."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in rs.recordings:
            for row in rec.samples:
                writer.writerow(
                    [rec.subject_id, rec.label]
                    + [repr(float(v)) for v in row]
                )


def window(rs: RecordingSet, window_len: int = WINDOW_LEN, stride: int = 64) -> WindowSet:
    """Slice every recording into fixed-length windows.

    Windows never straddle recording boundaries.  Recordings shorter than
    one window are skipped and counted (padding would fabricate signal
    content feeding the wavelet transform).
    """
    if window_len <= 0 or stride <= 0:
        raise DataError("INVALID_PARAMS", "window_len and stride must be positive")
    label_map = {label: i for i, label in enumerate(rs.labels())}
    windows = []
    skipped = 0
    for rec in rs.recordings:
        length = len(rec)
        if length < window_len:
            skipped += 1
            continue
        for offset in range(0, length - window_len + 1, stride):
            windows.append(
                SignalWindow(
                    values=rec.samples[offset : offset + window_len].copy(),
                    subject_id=rec.subject_id,
                    label=label_map[rec.label],
                    source_offset=offset,
                )
            )
    return WindowSet(
        windows=tuple(windows),
        label_map=label_map,
        skipped_recordings=skipped,
        window_len=window_len,
        stride=stride,
        sample_rate_hz=rs.sample_rate_hz,
    )


def _subject_universe(windows) -> list[str]:
    if isinstance(windows, WindowSet):
        windows = windows.windows
    return sorted({w.subject_id for w in windows})


def make_splits(
    windows,
    scheme: Scheme,
    seed: int,
    val_fraction: float = 0.2,
    test_fraction: float = 0.2,
) -> SplitPlan:
    """Build a subject-disjoint split plan.

    SCHEME1: 5 folds whose test sets partition the subject universe (sizes
    differing by at most one); within each fold's training subjects,
    ``val_fraction`` of subjects move to validation.  SCHEME2: a single
    fold holding out ``test_fraction`` of subjects.  Deterministic given
    the seed.
    """
    subjects = _subject_universe(windows)
    n = len(subjects)
    minimum = 5 if scheme is Scheme.SCHEME1 else 2
    if n < minimum:
        raise DataError(
            "TOO_FEW_SUBJECTS", f"{scheme.value} needs >= {minimum} subjects, got {n}"
        )
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(n)]

    def carve(train_side: list[str]) -> tuple[tuple[str, ...], tuple[str, ...]]:
        m = len(train_side)
        if m < 2:
            return tuple(sorted(train_side)), ()
        n_val = int(round(val_fraction * m))
        n_val = min(max(n_val, 1), m - 1)
        val = train_side[:n_val]
        train = train_side[n_val:]
        return tuple(sorted(train)), tuple(sorted(val))

    folds = []
    if scheme is Scheme.SCHEME1:
        chunks = np.array_split(np.arange(n), 5)
        for chunk in chunks:
            test = [order[i] for i in chunk]
            train_side = [s for s in order if s not in set(test)]
            train, val = carve(train_side)
            folds.append(Fold(train, val, tuple(sorted(test))))
    else:
        n_test = int(round(test_fraction * n))
        n_test = min(max(n_test, 1), n - 1)
        test = order[:n_test]
        train, val = carve(order[n_test:])
        folds.append(Fold(train, val, tuple(sorted(test))))
    return SplitPlan(scheme=scheme, folds=tuple(folds), seed=seed)


def split_windows(ws: WindowSet, fold: Fold):
    """Partition a WindowSet's windows by the fold's subject assignment."""
    groups = {"train": [], "val": [], "test": []}
    membership = {}
    for name, subs in (
        ("train", fold.train_subjects),
        ("val", fold.val_subjects),
        ("test", fold.test_subjects),
    ):
        for s in subs:
            membership[s] = name
    for w in ws.windows:
        part = membership.get(w.subject_id)
        if part is not None:
            groups[part].append(w)
    out = {}
    for name, items in groups.items():
        out[name] = WindowSet(
            windows=tuple(items),
            label_map=ws.label_map,
            skipped_recordings=0,
            window_len=ws.window_len,
            stride=ws.stride,
            sample_rate_hz=ws.sample_rate_hz,
        )
    return out["train"], out["val"], out["test"]


def synth_dataset(
    num_subjects: int,
    classes: list[ClassSpec],
    windows_per_subject_class: int,
    noise_std: float,
    seed: int,
) -> RecordingSet:
    """Deterministic sinusoid corpus for desk-scale verification.

    Each (subject, class) pair yields one recording of
    ``windows_per_subject_class * 128`` samples at 50 Hz:
    amplitude * sin(2*pi*f*t + phase_subject) + offset + N(0, noise_std^2)
    per channel.  The subject phase and the noise are drawn from
    seed-derived streams, so corpora are pure functions of the arguments.
    """
    seen = set()
    for spec in classes:
        if spec.freq_hz in seen:
            raise DataError("INVALID_SPEC", f"duplicate class frequencies {spec.freq_hz}")
        seen.add(spec.freq_hz)
    length = windows_per_subject_class * WINDOW_LEN
    dt = 1.0 / SYNTH_RATE_HZ
    t = np.arange(length) * dt
    recordings = []
    for si in range(num_subjects):
        subject = f"s{si:02d}"
        phase_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(si,)))
        phase = phase_rng.uniform(0.0, 2.0 * np.pi)
        for ci, spec in enumerate(classes):
            noise_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(si, ci))
            )
            values = np.empty((length, CHANNELS), dtype=np.float64)
            for ch in range(CHANNELS):
                clean = spec.amplitude[ch] * np.sin(
                    2.0 * np.pi * spec.freq_hz[ch] * t + phase
                ) + spec.offset[ch]
                values[:, ch] = clean
            if noise_std > 0:
                values += noise_rng.normal(0.0, noise_std, size=values.shape)
            recordings.append(Recording(subject, spec.label, values, SYNTH_RATE_HZ))
    return RecordingSet(tuple(recordings), SYNTH_RATE_HZ)
