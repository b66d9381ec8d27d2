"""Shared test helpers: independent rasterization oracle, random star
shapes, and session-scoped synthetic datasets."""

import numpy as np
import pytest

from dualpatch.fixtures import generate_fixtures
from dualpatch.geometry import PolygonShape
from dualpatch.harness import load_dataset

TWO_PI = 2.0 * np.pi


def random_star_shape(rng, k_min=3, k_max=16, r_lo=0.3, r_hi=2.0) -> PolygonShape:
    """Random valid star polygon: gap-constrained angles, bounded radii."""
    k = int(rng.integers(k_min, k_max + 1))
    while True:
        gaps = rng.uniform(0.2, 0.95 * np.pi, size=k)
        gaps *= TWO_PI / gaps.sum()
        if np.all(gaps < np.pi):
            break
    angles = np.cumsum(gaps) - gaps[0]
    angles = np.sort((angles + rng.uniform(0.0, TWO_PI)) % TWO_PI)
    radii = rng.uniform(r_lo, r_hi, size=k)
    return PolygonShape(tuple(zip(radii, angles)))


def oracle_point_in_polygon(px: float, py: float, xy) -> bool:
    """Even-odd rule via a division-free cross-product predicate.

    Deliberately a different formulation than the production kernels: the
    crossing comparison multiplies through by (y2 - y1) instead of
    dividing, so agreement is algorithmic, not copy-paste.
    """
    inside = False
    k = len(xy)
    j = k - 1
    for i in range(k):
        x1, y1 = xy[i]
        x2, y2 = xy[j]
        if (y1 > py) != (y2 > py):
            t = (px - x1) * (y2 - y1) - (py - y1) * (x2 - x1)
            if (t < 0.0) if (y2 > y1) else (t > 0.0):
                inside = not inside
        j = i
    return inside


def oracle_rasterize(xy: np.ndarray, width: int, height: int) -> np.ndarray:
    """Vectorized brute-force fill using the cross-product predicate."""
    px = np.arange(width, dtype=np.float64)[None, :] + 0.5
    py = np.arange(height, dtype=np.float64)[:, None] + 0.5
    inside = np.zeros((height, width), dtype=bool)
    k = len(xy)
    j = k - 1
    for i in range(k):
        x1, y1 = xy[i]
        x2, y2 = xy[j]
        crosses = (y1 > py) != (y2 > py)
        t = (px - x1) * (y2 - y1) - (py - y1) * (x2 - x1)
        left = (t < 0.0) if (y2 > y1) else (t > 0.0)
        inside ^= crosses & left
        j = i
    return inside


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture-data")
    generate_fixtures(out, n_frames=12, seed=42, image_size=(320, 240))
    return out


@pytest.fixture(scope="session")
def dataset(dataset_dir):
    return load_dataset(dataset_dir / "manifest.jsonl")
