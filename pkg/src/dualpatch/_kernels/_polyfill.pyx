# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scanline polygon fill over pixel centers (even-odd rule).

Per row: collect edge crossings, insertion-sort them, fill [odd, even)
spans. The crossing expression (slope * (py - y1) + x1 with slope
precomputed per edge) must stay identical to the numpy fallback in
fallback.py so both backends produce bit-identical masks; the extension is
compiled with -ffp-contract=off for the same reason.
"""

import numpy as np

from libc.math cimport ceil


def fill_window(double[::1] xs, double[::1] ys,
                unsigned char[:, ::1] out,
                Py_ssize_t row0, Py_ssize_t row1,
                Py_ssize_t col0, Py_ssize_t col1):
    """Set out[row, col] = 1 for pixel centers inside the polygon.

    xs/ys are polygon vertices in pixel coordinates; the window
    [row0, row1) x [col0, col1) must already be clipped to out's bounds.
    """
    cdef Py_ssize_t k = xs.shape[0]
    if k < 3 or row1 <= row0 or col1 <= col0:
        return
    cdef double[::1] slope = np.empty(k, dtype=np.float64)
    cdef double[::1] cross = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t i, j, row, col, m, a, b, cstart, cend
    cdef double py, x

    j = k - 1
    for i in range(k):
        if ys[j] != ys[i]:
            slope[i] = (xs[j] - xs[i]) / (ys[j] - ys[i])
        else:
            slope[i] = 0.0  # horizontal edge: never crosses a scanline
        j = i

    for row in range(row0, row1):
        py = row + 0.5
        m = 0
        j = k - 1
        for i in range(k):
            if (ys[i] > py) != (ys[j] > py):
                cross[m] = slope[i] * (py - ys[i]) + xs[i]
                m += 1
            j = i
        for a in range(1, m):
            x = cross[a]
            b = a - 1
            while b >= 0 and cross[b] > x:
                cross[b + 1] = cross[b]
                b -= 1
            cross[b + 1] = x
        # Pixel center px is inside iff the count of crossings with
        # px < crossing is odd, i.e. px in [cross[2a], cross[2a+1]).
        for a in range(0, m - 1, 2):
            cstart = <Py_ssize_t>ceil(cross[a] - 0.5)
            cend = <Py_ssize_t>ceil(cross[a + 1] - 0.5)
            if cstart < col0:
                cstart = col0
            if cend > col1:
                cend = col1
            for col in range(cstart, cend):
                out[row, col] = 1
