"""View-generating transforms for both contrastive learners.

Eight temporal transforms operate on (128, 3) signal windows; three
time-frequency transforms operate on (128, 128, 3) scalogram images whose
three channels are the accelerometer axes.  All randomness flows through
``RngStream``: identical (seed, stream_id) reproduce identical draws, and
per-view sub-streams are derived by counter-based splitting so batch-level
parallelism cannot change results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .dataio import SignalWindow
from .errors import DataError
from .wavelet import Scalogram

LUMA_WEIGHTS = np.asarray([0.299, 0.587, 0.114])


class TemporalKind(enum.Enum):
    NOISE = "noise"
    SCALE = "scale"
    NEGATION = "negation"
    TIME_FLIP = "time_flip"
    CHANNEL_SHUFFLE = "channel_shuffle"
    PERMUTATION = "permutation"
    ROTATION = "rotation"
    TIME_WARP = "time_warp"


class TimeFreqKind(enum.Enum):
    COLOR_DISTORT = "color_distort"
    CROP_RESIZE = "crop_resize"
    FLIP = "flip"


@dataclass(frozen=True)
class TemporalSpec:
    kind: TemporalKind
    noise_std: float = 0.1
    scale_mean: float = 1.0
    scale_std: float = 0.2
    permutation_segments: int = 4
    warp_knots: int = 4
    warp_std: float = 0.2

    def __post_init__(self):
        if self.noise_std < 0 or self.scale_std < 0 or self.warp_std < 0:
            raise DataError("INVALID_PARAMS", "spread parameters must be nonnegative")
        if self.permutation_segments < 1 or self.warp_knots < 1:
            raise DataError("INVALID_PARAMS", "segment and knot counts must be >= 1")


@dataclass(frozen=True)
class TimeFreqSpec:
    kind: TimeFreqKind
    brightness_range: tuple[float, float] = (-0.9, 0.9)
    contrast_range: tuple[float, float] = (0.1, 1.9)
    saturation_range: tuple[float, float] = (0.1, 1.9)
    hue_range: tuple[float, float] = (-0.3, 0.3)
    grayscale_prob: float = 0.2
    crop_area_range: tuple[float, float] = (0.2, 1.0)
    crop_aspect_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)

    def __post_init__(self):
        lo, hi = self.crop_area_range
        if not (0 < lo <= hi <= 1):
            raise DataError("INVALID_PARAMS", "crop area fractions must lie in (0, 1]")
        if not 0 <= self.grayscale_prob <= 1:
            raise DataError("INVALID_PARAMS", "grayscale_prob must lie in [0, 1]")


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream addressed by (seed, stream_id, path)."""

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def child(self, *indices: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise DataError("INVALID_PARAMS", f"expected RngStream or Generator, got {type(rng)!r}")


# ---------------------------------------------------------------------------
# temporal transforms


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about ``axis`` (unit vector) by ``angle`` radians."""
    ax = np.asarray(axis, dtype=np.float64)
    ax = ax / np.linalg.norm(ax)
    x, y, z = ax
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def permute_segments(values: np.ndarray, order) -> np.ndarray:
    """Concatenate contiguous time slices in the given order; the last slice
    absorbs any remainder."""
    n = len(order)
    length = values.shape[0]
    base = length // n
    bounds = [i * base for i in range(n)] + [length]
    segments = [values[bounds[i] : bounds[i + 1]] for i in range(n)]
    return np.concatenate([segments[i] for i in order], axis=0)


def _warp_positions(length: int, knots: int, std: float, gen) -> np.ndarray:
    """Monotone time remap: perturbed interior knots, sorted, cubic-interpolated."""
    src = np.linspace(0.0, 1.0, knots + 2)
    tgt = src.copy()
    tgt[1:-1] = np.clip(np.sort(src[1:-1] + gen.normal(0.0, std, knots)), 0.0, 1.0)
    mapping = PchipInterpolator(src, tgt)
    return mapping(np.linspace(0.0, 1.0, length)) * (length - 1)


def apply_temporal(w: SignalWindow, spec: TemporalSpec, rng) -> SignalWindow:
    """Apply one temporal transform; shape (L, 3) is always preserved."""
    gen = _as_generator(rng)
    values = np.asarray(w.values)
    if values.ndim != 2 or values.shape[1] != 3:
        raise DataError("BAD_SHAPE", f"expected (length, 3) window, got {values.shape}")
    out = _apply_temporal_array(values, spec, gen)
    return SignalWindow(out, w.subject_id, w.label, w.source_offset)


def _apply_temporal_array(values: np.ndarray, spec: TemporalSpec, gen) -> np.ndarray:
    kind = spec.kind
    if kind is TemporalKind.NOISE:
        return values + gen.normal(0.0, spec.noise_std, values.shape).astype(values.dtype, copy=False)
    if kind is TemporalKind.SCALE:
        s = gen.normal(spec.scale_mean, spec.scale_std)
        return values * values.dtype.type(s)
    if kind is TemporalKind.NEGATION:
        return -values
    if kind is TemporalKind.TIME_FLIP:
        return values[::-1].copy()
    if kind is TemporalKind.CHANNEL_SHUFFLE:
        return values[:, gen.permutation(3)]
    if kind is TemporalKind.PERMUTATION:
        order = gen.permutation(spec.permutation_segments)
        return permute_segments(values, order)
    if kind is TemporalKind.ROTATION:
        axis = gen.normal(size=3)
        while not np.any(axis):
            axis = gen.normal(size=3)
        angle = gen.uniform(0.0, 2.0 * np.pi)
        rot = rotation_matrix(axis, angle)
        return (values @ rot.T).astype(values.dtype, copy=False)
    if kind is TemporalKind.TIME_WARP:
        u = _warp_positions(values.shape[0], spec.warp_knots, spec.warp_std, gen)
        grid = np.arange(values.shape[0], dtype=np.float64)
        out = np.empty_like(values)
        for c in range(values.shape[1]):
            out[:, c] = np.interp(u, grid, values[:, c].astype(np.float64))
        return out
    raise DataError("INVALID_PARAMS", f"unknown temporal kind {kind!r}")


# ---------------------------------------------------------------------------
# time-frequency transforms


def _luma(pixels: np.ndarray) -> np.ndarray:
    return pixels @ LUMA_WEIGHTS.astype(pixels.dtype)


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channel-wise bilinear resize with corner-aligned sampling, so resizing
    to the same size is the identity."""
    h, w = pixels.shape[:2]
    ys = np.linspace(0.0, h - 1.0, out_h) if h > 1 else np.zeros(out_h)
    xs = np.linspace(0.0, w - 1.0, out_w) if w > 1 else np.zeros(out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(pixels.dtype)[:, None, None]
    fx = (xs - x0).astype(pixels.dtype)[None, :, None]
    p00 = pixels[y0][:, x0]
    p01 = pixels[y0][:, x1]
    p10 = pixels[y1][:, x0]
    p11 = pixels[y1][:, x1]
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return top * (1 - fy) + bot * fy


def crop_resize(pixels: np.ndarray, top: int, left: int, height: int, width: int) -> np.ndarray:
    crop = pixels[top : top + height, left : left + width]
    return bilinear_resize(crop, pixels.shape[0], pixels.shape[1])


def _color_distort(pixels: np.ndarray, spec: TimeFreqSpec, gen) -> np.ndarray:
    out = pixels.astype(np.float64)
    out = out + gen.uniform(*spec.brightness_range)
    mean = out.mean(axis=(0, 1), keepdims=True)
    out = (out - mean) * gen.uniform(*spec.contrast_range) + mean
    gray = _luma(out)[..., None]
    out = gray + (out - gray) * gen.uniform(*spec.saturation_range)
    hue = gen.uniform(*spec.hue_range)
    rot = rotation_matrix(np.ones(3) / np.sqrt(3.0), 2.0 * np.pi * hue)
    out = out @ rot.T
    if gen.uniform() < spec.grayscale_prob:
        out = np.repeat(_luma(out)[..., None], 3, axis=2)
    return np.clip(out, 0.0, 1.0).astype(pixels.dtype, copy=False)


def apply_timefreq(s: Scalogram, spec: TimeFreqSpec, rng) -> Scalogram:
    """Apply one time-frequency transform; output stays (128, 128, 3) in [0, 1]."""
    gen = _as_generator(rng)
    pixels = np.asarray(s.pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DataError("BAD_SHAPE", f"expected (h, w, 3) scalogram, got {pixels.shape}")
    return Scalogram(_apply_timefreq_array(pixels, spec, gen), s.source)


def _apply_timefreq_array(pixels: np.ndarray, spec: TimeFreqSpec, gen) -> np.ndarray:
    kind = spec.kind
    if kind is TimeFreqKind.FLIP:
        return pixels[:, ::-1, :].copy()
    if kind is TimeFreqKind.COLOR_DISTORT:
        return _color_distort(pixels, spec, gen)
    if kind is TimeFreqKind.CROP_RESIZE:
        h, w = pixels.shape[:2]
        area = gen.uniform(*spec.crop_area_range) * h * w
        log_lo, log_hi = np.log(spec.crop_aspect_range)
        ratio = np.exp(gen.uniform(log_lo, log_hi))  # width / height
        ch = int(round(np.sqrt(area / ratio)))
        cw = int(round(np.sqrt(area * ratio)))
        ch = min(max(ch, 1), h)
        cw = min(max(cw, 1), w)
        top = int(gen.integers(0, h - ch + 1))
        left = int(gen.integers(0, w - cw + 1))
        out = crop_resize(pixels, top, left, ch, cw)
        return np.clip(out, 0.0, 1.0).astype(pixels.dtype, copy=False)
    raise DataError("INVALID_PARAMS", f"unknown time-frequency kind {kind!r}")


# ---------------------------------------------------------------------------
# two-view generation


@dataclass(frozen=True)
class ViewPipeline:
    """Ordered transform steps with per-step application probability.

    ``composed`` mode applies every step independently with its probability;
    ``ablation`` mode applies exactly one uniformly chosen step per view
    (single-transform pretraining).
    """

    steps: tuple = ()
    mode: str = "composed"

    def __post_init__(self):
        if self.mode not in ("composed", "ablation"):
            raise DataError("INVALID_PARAMS", f"unknown pipeline mode {self.mode!r}")
        for _, prob in self.steps:
            if not 0.0 <= prob <= 1.0:
                raise DataError("INVALID_PARAMS", "step probability must lie in [0, 1]")


def _apply_any(sample, spec, gen):
    if isinstance(spec, TemporalSpec):
        if not isinstance(sample, SignalWindow):
            raise DataError("BAD_SHAPE", "temporal transform applied to a non-window")
        return apply_temporal(sample, spec, gen)
    if isinstance(spec, TimeFreqSpec):
        if not isinstance(sample, Scalogram):
            raise DataError("BAD_SHAPE", "time-frequency transform applied to a non-scalogram")
        return apply_timefreq(sample, spec, gen)
    raise DataError("INVALID_PARAMS", f"unknown spec type {type(spec)!r}")


def make_views(sample, pipeline: ViewPipeline, rng: RngStream):
    """Generate the two stochastic views used by the contrastive objectives.

    The two views draw from disjoint sub-streams of ``rng``, so the number
    of draws consumed by one view can never perturb the other.
    """
    if not pipeline.steps:
        raise DataError("EMPTY_PIPELINE", "view pipeline has no transforms")
    views = []
    for view_index in (0, 1):
        gen = rng.child(view_index).generator()
        out = sample
        if pipeline.mode == "ablation":
            spec, _ = pipeline.steps[int(gen.integers(len(pipeline.steps)))]
            out = _apply_any(out, spec, gen)
        else:
            for spec, prob in pipeline.steps:
                if gen.uniform() < prob:
                    out = _apply_any(out, spec, gen)
        views.append(out)
    return views[0], views[1]
