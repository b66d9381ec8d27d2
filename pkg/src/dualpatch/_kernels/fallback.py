"""Vectorized numpy polygon fill, used when the compiled kernel is absent.

Evaluates the same even-odd crossing predicate as _polyfill.pyx with the
same floating-point operation order (per-edge slope, then
slope * (py - y1) + x1), so masks are bit-identical across backends.
"""

import numpy as np


def fill_window(xs, ys, out, row0, row1, col0, col1):
    """Set out[row, col] = 1 for pixel centers inside the polygon."""
    if row1 <= row0 or col1 <= col0:
        return
    py = (np.arange(row0, row1, dtype=np.float64) + 0.5)[:, None]
    px = (np.arange(col0, col1, dtype=np.float64) + 0.5)[None, :]
    inside = np.zeros((row1 - row0, col1 - col0), dtype=bool)
    k = xs.shape[0]
    j = k - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(k):
            crosses = (ys[i] > py) != (ys[j] > py)
            slope = (xs[j] - xs[i]) / (ys[j] - ys[i])
            xcross = slope * (py - ys[i]) + xs[i]
            inside ^= crosses & (px < xcross)
            j = i
    out[row0:row1, col0:col1] |= inside
