"""Time the numba kernels against their numpy fallbacks on realistic sizes.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants are called directly, so the RESYN_DISABLE_NUMBA switch does not
matter here. The first numba call (compilation) is excluded from the timings.
"""
import argparse
import timeit

import numpy as np

from resyn import kernels
from resyn._accel import HAS_NUMBA


def cases(rng):
    h, w = 512, 1024
    gy, gx = rng.normal(size=(h, w)), rng.normal(size=(h, w))
    mag = np.hypot(gy, gx)
    ori = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    hist = kernels.hog_cell_histograms_numpy(mag, ori, 8, 9)
    n = 512 * 1024
    scores = np.sort(np.round(rng.random(n), 4))[::-1].copy()
    labels = rng.random(n) < 0.05
    ny, nx = (h - 8) // 6 + 1, (w - 8) // 6 + 1
    patch_scores = rng.random((ny, nx))
    return {
        "hog_cell_histograms 512x1024": ("hog_cell_histograms", (mag, ori, 8, 9)),
        "hog_blocks 64x128 cells": ("hog_blocks", (hist, 2, 0.2, 1e-5)),
        "roc_counts 524288 px": ("roc_counts", (scores, labels)),
        "patch_coverage 8/6 on 512x1024": ("patch_coverage", (patch_scores, 6, 8, h, w)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for label, (name, args_) in cases(rng).items():
        f_np = getattr(kernels, f"{name}_numpy")
        f_nb = getattr(kernels, f"{name}_numba")
        a, b = f_np(*args_), f_nb(*args_)  # also compiles the numba variant
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        agree = all(np.allclose(x, y, rtol=1e-12, atol=1e-12) for x, y in zip(a, b))
        t_np = min(timeit.repeat(lambda: f_np(*args_), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*args_), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:34s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:8.1f}x  {agree}")


if __name__ == "__main__":
    main()
