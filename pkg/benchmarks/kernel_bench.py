#!/usr/bin/env python3
"""Benchmark the numba kernel path against the pure-numpy fallback.

Usage:
    python3 benchmarks/kernel_bench.py [--repeats N]

The same workloads run through both implementations; the table reports
median wall time per call and the speedup of the jit path. Setting
SCOUTCV_NUMBA=0 at import time is how the package itself selects the
numpy path; here both are exercised directly.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from scoutcv import _kernels as k


def median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return sorted(times)[len(times) // 2]


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if not k.USING_NUMBA:
        raise SystemExit("numba path is disabled (SCOUTCV_NUMBA=0); nothing to compare")

    rng = np.random.default_rng(0)
    img = rng.random((480, 640, 3))
    fmap = rng.standard_normal((64, 56, 56)).astype(np.float32)

    cases = [
        (
            "bilinear resize 480x640 -> 224x224",
            lambda: k._resize_bilinear_jit(img, 224, 224),
            lambda: k._resize_bilinear_np(img, 224, 224),
        ),
        (
            "im2col 64x56x56, 3x3 s1 p1",
            lambda: k._im2col_jit(fmap, 3, 3, 1, 1, 1, 1, 56, 56),
            lambda: k._im2col_np(fmap, 3, 3, 1, 1, 1, 1, 1, 1, 56, 56),
        ),
        (
            "maxpool 64x56x56, 3x3 s2 p1",
            lambda: k._maxpool_jit(fmap, 3, 3, 2, 2, 1, 1, 28, 28),
            lambda: k._pool_np(fmap, (3, 3), (2, 2), (1, 1, 1, 1), "max"),
        ),
        (
            "avgpool 64x56x56, 3x3 s2 p1",
            lambda: k._avgpool_jit(fmap, 3, 3, 2, 2, 1, 1, 28, 28),
            lambda: k._pool_np(fmap, (3, 3), (2, 2), (1, 1, 1, 1), "avg"),
        ),
    ]

    print(f"{'kernel':<38} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for name, jit_fn, np_fn in cases:
        jit_out = jit_fn()  # warm the jit compile before timing
        np_out = np_fn()
        if not np.allclose(np.asarray(jit_out, dtype=np.float64),
                           np.asarray(np_out, dtype=np.float64), rtol=1e-5, atol=1e-6):
            raise SystemExit(f"paths disagree for {name}")
        t_jit = median_time(jit_fn, args.repeats)
        t_np = median_time(np_fn, args.repeats)
        print(f"{name:<38} {t_jit * 1e3:>8.2f}ms {t_np * 1e3:>8.2f}ms {t_np / t_jit:>7.2f}x")


if __name__ == "__main__":
    main()
