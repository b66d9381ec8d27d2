#!/usr/bin/env python3
"""Benchmark: compiled rasterization kernel vs the numpy fallback.

Times mask fills for random star polygons across grid sizes and verifies
both backends produce bit-identical masks while timing them.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import math
import time

import numpy as np

from dualpatch._kernels import fallback
from dualpatch.geometry import Rect, polygon_area, to_cartesian

try:
    from dualpatch._kernels import _polyfill as compiled
except ImportError:
    compiled = None


def random_star_shape(rng, k_min=3, k_max=16):
    k = int(rng.integers(k_min, k_max + 1))
    while True:
        gaps = rng.uniform(0.2, 0.95 * np.pi, size=k)
        gaps *= 2.0 * np.pi / gaps.sum()
        if np.all(gaps < np.pi):
            break
    angles = np.sort((np.cumsum(gaps) - gaps[0] + rng.uniform(0, 2 * np.pi)) % (2 * np.pi))
    radii = rng.uniform(0.3, 2.0, size=k)
    from dualpatch.geometry import PolygonShape

    return PolygonShape(tuple(zip(radii, angles)))


def prepare_cases(size: int, count: int, seed: int):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(count):
        shape = random_star_shape(rng)
        rect = Rect(size * 0.15, size * 0.15, size * 0.7, size * 0.7)
        scale = math.sqrt(rect.area / polygon_area(shape))
        xy = to_cartesian(shape, rect.center, scale)
        cases.append((np.ascontiguousarray(xy[:, 0]), np.ascontiguousarray(xy[:, 1])))
    return cases


def run_backend(fill, cases, size: int, as_uint8: bool):
    masks = []
    start = time.perf_counter()
    for xs, ys in cases:
        bits = np.zeros((size, size), dtype=bool)
        fill(xs, ys, bits.view(np.uint8) if as_uint8 else bits, 0, size, 0, size)
        masks.append(bits)
    return time.perf_counter() - start, masks


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=300,
                        help="shapes per grid size (default 300)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if compiled is None:
        print("compiled kernel not built (run: python setup.py build_ext --inplace)")
        print("timing fallback only\n")

    print(f"{'grid':>8} {'fallback':>12} {'compiled':>12} {'speedup':>9}  parity")
    for size in (16, 32, 64, 128, 256):
        cases = prepare_cases(size, args.repeats, args.seed)
        t_fb, masks_fb = run_backend(fallback.fill_window, cases, size, as_uint8=False)
        line = f"{size:>5}^2  {t_fb / len(cases) * 1e6:>10.1f}us"
        if compiled is not None:
            t_c, masks_c = run_backend(compiled.fill_window, cases, size, as_uint8=True)
            identical = all(np.array_equal(a, b) for a, b in zip(masks_fb, masks_c))
            line += (f" {t_c / len(cases) * 1e6:>10.1f}us {t_fb / t_c:>8.1f}x"
                     f"  {'bit-exact' if identical else 'MISMATCH'}")
            if not identical:
                raise SystemExit("backends disagree")
        print(line)


if __name__ == "__main__":
    main()
