"""Continuous wavelet transform with the real Morlet mother wavelet.

The mother wavelet is psi(t) = exp(-t^2/2) * cos(5t); its center frequency
is 5/(2*pi) cycles per unit, so a scale ``a`` responds most strongly to the
pseudo-frequency f = (5/(2*pi)) / a.  Scalograms are per-channel magnitude
maps, min-max normalized to [0, 1], with scale ascending downward (low
frequency at the bottom row) and time on the horizontal axis.

Edges are handled by truncating the wavelet overlap rather than padding,
which avoids fabricating low-frequency energy at window borders.  The
wavelet support is cut off where |t| > 6 (|psi| < 2e-8 beyond).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dataio import SignalWindow
from .errors import DataError

CENTER_FREQ = 5.0 / (2.0 * np.pi)  # cycles per unit time of the mother wavelet
SUPPORT_RADIUS = 6.0
SCALOGRAM_SIZE = 128
BIN_MAGIC = b"TFSCA001"


def morlet(t):
    """Evaluate the real Morlet mother wavelet, elementwise."""
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-0.5 * t * t) * np.cos(5.0 * t)


@dataclass(frozen=True)
class ScaleGrid:
    scales: np.ndarray  # strictly increasing, seconds per unit
    dt: float  # sampling period, seconds

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=np.float64)
        if scales.ndim != 1 or scales.size < 1:
            raise DataError("INVALID_RANGE", "scales must be a non-empty vector")
        if not np.all(scales > 0):
            raise DataError("INVALID_RANGE", "scales must be positive")
        if scales.size > 1 and not np.all(np.diff(scales) > 0):
            raise DataError("INVALID_RANGE", "scales must be strictly increasing")
        if not self.dt > 0:
            raise DataError("INVALID_RANGE", "dt must be positive")
        object.__setattr__(self, "scales", scales)

    @property
    def n_scales(self) -> int:
        return self.scales.size

    def pseudo_frequencies(self) -> np.ndarray:
        return CENTER_FREQ / self.scales

    def to_dict(self) -> dict:
        return {"scales": [float(a) for a in self.scales], "dt": float(self.dt)}

    @staticmethod
    def from_dict(d: dict) -> "ScaleGrid":
        return ScaleGrid(np.asarray(d["scales"], dtype=np.float64), float(d["dt"]))


@dataclass(frozen=True)
class Scalogram:
    pixels: np.ndarray  # (128, 128, 3), values in [0, 1]
    source: SignalWindow | None = None


def scale_grid(
    n_scales: int = SCALOGRAM_SIZE,
    f_min: float = 0.5,
    f_max: float = 20.0,
    dt: float = 0.02,
) -> ScaleGrid:
    """Geometrically spaced scales whose pseudo-frequencies span [f_min, f_max]."""
    if n_scales < 1:
        raise DataError("INVALID_RANGE", "n_scales must be >= 1")
    nyquist = 1.0 / (2.0 * dt) if dt > 0 else 0.0
    if not (0 < f_min <= f_max < nyquist):
        raise DataError(
            "INVALID_RANGE",
            f"need 0 < f_min <= f_max < Nyquist ({nyquist} Hz), got [{f_min}, {f_max}]",
        )
    if n_scales == 1:
        if f_min != f_max:
            raise DataError("INVALID_RANGE", "n_scales=1 requires f_min == f_max")
        freqs = np.asarray([f_max], dtype=np.float64)
    else:
        if f_min == f_max:
            raise DataError("INVALID_RANGE", "n_scales>1 requires f_min < f_max")
        freqs = np.geomspace(f_max, f_min, n_scales)
    return ScaleGrid(scales=CENTER_FREQ / freqs, dt=dt)


_kernel_cache: dict[tuple, list[np.ndarray]] = {}


def _wavelet_kernels(grid: ScaleGrid, length: int) -> list[np.ndarray]:
    """Sampled wavelet per scale, truncated at |t| > 6 and at the signal length."""
    key = (grid.scales.tobytes(), grid.dt, length)
    kernels = _kernel_cache.get(key)
    if kernels is None:
        kernels = []
        for a in grid.scales:
            radius = min(int(SUPPORT_RADIUS * a / grid.dt), length - 1)
            offsets = np.arange(-radius, radius + 1, dtype=np.float64)
            kernels.append(morlet(offsets * grid.dt / a))
        _kernel_cache[key] = kernels
    return kernels


def cwt(channel: np.ndarray, grid: ScaleGrid) -> np.ndarray:
    """Discretized transform: out[s, b] = dt/sqrt(a_s) * sum_n x[n] psi((n-b)dt/a_s).

    The sum runs over samples with |(n-b)*dt/a_s| <= 6; near the window
    borders the overlap is simply shorter (no padding).
    """
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise DataError("EMPTY_SIGNAL", f"need a 1-D signal of length >= 2, got shape {x.shape}")
    length = x.size
    out = np.empty((grid.n_scales, length), dtype=np.float64)
    kernels = _wavelet_kernels(grid, length)
    for si, (a, kernel) in enumerate(zip(grid.scales, kernels)):
        radius = (kernel.size - 1) // 2
        full = np.convolve(x, kernel, mode="full")
        out[si] = (grid.dt / np.sqrt(a)) * full[radius : radius + length]
    return out


def scalogram(w: SignalWindow, grid: ScaleGrid) -> Scalogram:
    """Render one window as a 3-channel magnitude image in [0, 1].

    Per channel the |CWT| plane is min-max normalized; a constant plane maps
    to all zeros, so two windows differing only by a positive scalar factor
    produce identical scalograms.
    """
    values = np.asarray(w.values, dtype=np.float64)
    if values.shape != (SCALOGRAM_SIZE, 3):
        raise DataError("BAD_SHAPE", f"window values must be (128, 3), got {values.shape}")
    if grid.n_scales != SCALOGRAM_SIZE:
        raise DataError("BAD_SHAPE", f"grid must have 128 scales, got {grid.n_scales}")
    pixels = np.empty((SCALOGRAM_SIZE, SCALOGRAM_SIZE, 3), dtype=np.float64)
    for c in range(3):
        plane = np.abs(cwt(values[:, c], grid))
        lo = plane.min()
        hi = plane.max()
        if hi > lo:
            pixels[:, :, c] = (plane - lo) / (hi - lo)
        else:
            pixels[:, :, c] = 0.0
    return Scalogram(pixels=pixels, source=w)


def scalogram_batch(windows, grid: ScaleGrid, jobs: int | None = None) -> np.ndarray:
    """Transform many windows; output order follows input order exactly."""
    windows = list(windows)
    if jobs and jobs > 1 and len(windows) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            planes = list(pool.map(lambda w: scalogram(w, grid).pixels, windows))
    else:
        planes = [scalogram(w, grid).pixels for w in windows]
    if not planes:
        return np.zeros((0, SCALOGRAM_SIZE, SCALOGRAM_SIZE, 3), dtype=np.float64)
    return np.stack(planes)


def write_scalogram_bin(path, pixels: np.ndarray) -> None:
    """Portable float export: 8-byte magic, 3 LE uint32 dims, LE float32 row-major."""
    arr = np.ascontiguousarray(pixels, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(struct.pack("<III", *arr.shape))
        fh.write(arr.tobytes())


def read_scalogram_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != BIN_MAGIC:
            raise DataError("MALFORMED_ROW", f"{path}: bad magic {magic!r}")
        dims = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(), dtype="<f4")
    expected = dims[0] * dims[1] * dims[2]
    if data.size != expected:
        raise DataError("MALFORMED_ROW", f"{path}: payload size {data.size} != {expected}")
    return data.reshape(dims).astype(np.float64)


def write_preview_png(path, pixels: np.ndarray) -> None:
    """8-bit preview image for eyeballing scalograms."""
    from PIL import Image

    arr = np.clip(np.asarray(pixels), 0.0, 1.0)
    img = Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB")
    img.save(path, format="PNG")
