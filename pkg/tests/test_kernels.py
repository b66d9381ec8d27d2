"""Kernel backend selection and compiled/fallback parity."""

import math

import numpy as np
import pytest

from conftest import random_star_shape
from dualpatch import _kernels
from dualpatch._kernels import fallback
from dualpatch.geometry import Rect, polygon_area, to_cartesian

compiled = pytest.importorskip(
    "dualpatch._kernels._polyfill", reason="compiled kernel not built"
)


def _fill_both(xy, size):
    xs = np.ascontiguousarray(xy[:, 0])
    ys = np.ascontiguousarray(xy[:, 1])
    a = np.zeros((size, size), dtype=bool)
    b = np.zeros((size, size), dtype=bool)
    compiled.fill_window(xs, ys, a.view(np.uint8), 0, size, 0, size)
    fallback.fill_window(xs, ys, b, 0, size, 0, size)
    return a, b


def test_backend_reports_compiled():
    assert _kernels.BACKEND in ("compiled", "fallback")


def test_pure_env_var_selects_fallback():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from dualpatch import _kernels; print(_kernels.BACKEND)"],
        env={"DUALPATCH_PURE": "1", "PATH": "/usr/bin:/bin"},
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "fallback"


def test_bit_identical_masks_across_backends():
    rng = np.random.default_rng(11)
    for _ in range(200):
        shape = random_star_shape(rng)
        size = int(rng.integers(8, 64))
        rect = Rect(
            float(rng.uniform(-8, size)),
            float(rng.uniform(-8, size)),
            float(rng.uniform(2, size)),
            float(rng.uniform(2, size)),
        )
        scale = math.sqrt(rect.area / polygon_area(shape))
        xy = to_cartesian(shape, rect.center, scale)
        a, b = _fill_both(xy, size)
        assert np.array_equal(a, b)


def test_window_clipping_sets_nothing_outside():
    rng = np.random.default_rng(12)
    shape = random_star_shape(rng)
    rect = Rect(0.0, 0.0, 30.0, 30.0)
    scale = math.sqrt(rect.area / polygon_area(shape))
    xy = to_cartesian(shape, rect.center, scale)
    xs = np.ascontiguousarray(xy[:, 0])
    ys = np.ascontiguousarray(xy[:, 1])
    full = np.zeros((32, 32), dtype=bool)
    windowed = np.zeros((32, 32), dtype=bool)
    _kernels.fill_window(xs, ys, full, 0, 32, 0, 32)
    _kernels.fill_window(xs, ys, windowed, 5, 20, 5, 20)
    assert np.array_equal(windowed, full & np.pad(
        np.ones((15, 15), dtype=bool), ((5, 12), (5, 12))
    ))


def test_empty_window_is_noop():
    bits = np.zeros((8, 8), dtype=bool)
    xs = np.array([1.0, 3.0, 2.0])
    ys = np.array([1.0, 1.0, 3.0])
    _kernels.fill_window(xs, ys, bits, 4, 4, 0, 8)
    assert bits.sum() == 0
