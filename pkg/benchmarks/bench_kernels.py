#!/usr/bin/env python3
"""Benchmark the two convolution kernel lanes at the artifact's hot shapes.

Compares the compiled extension against the numpy/BLAS fallback on the
encoder layer shapes (forward and backward), plus one full encoder-stack
pass and the wavelet transform. Run:

    python benchmarks/bench_kernels.py [--batch 8] [--repeats 3] [--dtype float32]
"""

import argparse
import time

import numpy as np

from duohar.kernels import py_backend

try:
    from duohar.kernels import _core as cython_core
except ImportError:
    cython_core = None

SIGNAL_LAYERS = [  # (L, Ci, K, Co)
    ("sig conv1 12x3->32", (128, 3, 12, 32)),
    ("sig conv2 8x32->64", (117, 32, 8, 64)),
    ("sig conv3 8x64->96", (110, 64, 8, 96)),
]
SCALOGRAM_LAYERS = [  # (H, W, Ci, KH, KW, Co)
    ("sca conv1 8x8x3->32", (128, 128, 3, 8, 8, 32)),
    ("sca conv2 4x4x32->64", (121, 121, 32, 4, 4, 64)),
    ("sca conv3 4x4x64->96", (118, 118, 64, 4, 4, 96)),
]


def timeit(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_layer(impl, spec, batch, dtype, repeats, two_d):
    rng = np.random.default_rng(0)
    if two_d:
        h, w_, ci, kh, kw, co = spec
        x = np.ascontiguousarray(rng.normal(size=(batch, h, w_, ci)).astype(dtype))
        w = np.ascontiguousarray(rng.normal(size=(kh, kw, ci, co)).astype(dtype))
        b = np.zeros(co, dtype=dtype)
        fwd = lambda: impl.conv2d_forward(x, w, b)
        out = fwd()
        g = np.ones_like(out)
        bwd = lambda: impl.conv2d_backward(x, w, g, True, True)
        macs = batch * out.shape[1] * out.shape[2] * co * kh * kw * ci
    else:
        length, ci, k, co = spec
        x = np.ascontiguousarray(rng.normal(size=(batch, length, ci)).astype(dtype))
        w = np.ascontiguousarray(rng.normal(size=(k, ci, co)).astype(dtype))
        b = np.zeros(co, dtype=dtype)
        fwd = lambda: impl.conv1d_forward(x, w, b)
        out = fwd()
        g = np.ones_like(out)
        bwd = lambda: impl.conv1d_backward(x, w, g, True, True)
        macs = batch * out.shape[1] * co * k * ci
    t_f = timeit(fwd, repeats)
    t_b = timeit(bwd, repeats)
    return t_f, t_b, macs


def bench_cwt(repeats):
    from duohar.dataio import SignalWindow
    from duohar.wavelet import scale_grid, scalogram

    rng = np.random.default_rng(1)
    w = SignalWindow(rng.normal(size=(128, 3)), "s", 0, 0)
    grid = scale_grid(dt=0.02)
    return timeit(lambda: scalogram(w, grid), repeats)


def run_lane(lane: str, args) -> None:
    impl = py_backend if lane == "numpy" else cython_core
    dtype = np.dtype(args.dtype)
    print(f"[{lane} lane]  batch={args.batch} dtype={args.dtype} best-of-{args.repeats}")
    print(f"{'layer':<24}{'fwd':>12}{'bwd':>12}{'fwd GFLOPS':>12}{'bwd GFLOPS':>12}")
    for label, spec in SIGNAL_LAYERS + SCALOGRAM_LAYERS:
        two_d = len(spec) == 6
        t_f, t_b, macs = bench_layer(impl, spec, args.batch, dtype, args.repeats, two_d)
        print(
            f"{label:<24}{t_f * 1e3:>9.1f} ms{t_b * 1e3:>9.1f} ms"
            f"{2 * macs / t_f / 1e9:>12.1f}{4 * macs / t_b / 1e9:>12.1f}"
        )
    if lane == "numpy":
        print(f"{'scalogram transform':<24}{bench_cwt(args.repeats) * 1e3:>9.1f} ms/window")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    parser.add_argument(
        "--lane",
        choices=("numpy", "cython", "both"),
        default="both",
        help="'both' runs each lane in its own process so the BLAS and OpenMP "
        "thread pools cannot contend and skew each other's numbers",
    )
    args = parser.parse_args()

    if args.lane == "both":
        import subprocess
        import sys

        for lane in ("cython", "numpy"):
            if lane == "cython" and cython_core is None:
                print("compiled extension unavailable; skipping the cython lane")
                continue
            subprocess.run(
                [
                    sys.executable,
                    __file__,
                    "--lane",
                    lane,
                    "--batch",
                    str(args.batch),
                    "--repeats",
                    str(args.repeats),
                    "--dtype",
                    args.dtype,
                ],
                check=True,
            )
            print()
        return
    if args.lane == "cython" and cython_core is None:
        raise SystemExit("compiled extension unavailable")
    run_lane(args.lane, args)


if __name__ == "__main__":
    main()
