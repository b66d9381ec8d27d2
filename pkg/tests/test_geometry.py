"""Geometry: validation, area control, rasterization, mask IoU."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import oracle_rasterize, random_star_shape
from dualpatch.geometry import (
    BitMask,
    PolygonShape,
    Rect,
    load_shape,
    mask_iou,
    normalize_area,
    polygon_area,
    rasterize,
    regular_polygon,
    save_shape,
    to_cartesian,
    validate,
)


def square() -> PolygonShape:
    return regular_polygon(4)  # vertices at 45/135/225/315 degrees


class TestValidate:
    def test_regular_octagon_ok(self):
        assert validate(regular_polygon(8)) == []

    def test_equal_angles_rejected(self):
        shape = PolygonShape(((1.0, 1.0), (1.0, 1.0), (1.0, 2.0)))
        assert "angles strictly increasing" in validate(shape)

    def test_two_vertices_rejected(self):
        shape = PolygonShape(((1.0, 0.0), (1.0, 3.0)))
        assert "K >= 3" in validate(shape)

    def test_k_max_enforced(self):
        shape = random_star_shape(np.random.default_rng(0), k_min=10, k_max=12)
        assert validate(shape, k_max=8) == [f"K <= K_max (8)"]

    def test_nonpositive_radius(self):
        shape = PolygonShape(((1.0, 0.5), (0.0, 2.0), (1.0, 4.0)))
        assert "radii > 0" in validate(shape)

    def test_wraparound_gap_checked(self):
        # All vertices inside a half-plane wedge: wrap gap > pi.
        shape = PolygonShape(((1.0, 0.1), (1.0, 0.6), (1.0, 1.1)))
        assert "angle gaps < pi" in validate(shape)

    def test_angle_domain(self):
        shape = PolygonShape(((1.0, 0.0), (1.0, 2.0), (1.0, 7.0)))
        assert "angles within [0, 2pi)" in validate(shape)

    def test_random_shapes_valid(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            assert validate(random_star_shape(rng)) == []


class TestToCartesian:
    def test_unit_square_coordinates(self):
        xy = to_cartesian(square())
        expected = math.sqrt(0.5)
        assert np.allclose(np.abs(xy), expected, atol=1e-12)

    def test_scale_linearity(self):
        xy1 = to_cartesian(square(), scale=1.0)
        xy2 = to_cartesian(square(), scale=2.0)
        assert np.allclose(xy2, 2.0 * xy1)

    def test_single_radius_moves_one_vertex(self):
        base = square()
        verts = list(base.vertices)
        verts[2] = (2.0 * verts[2][0], verts[2][1])
        moved = to_cartesian(PolygonShape(tuple(verts)))
        orig = to_cartesian(base)
        changed = ~np.all(np.isclose(moved, orig), axis=1)
        assert changed.tolist() == [False, False, True, False]

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ValueError):
            to_cartesian(square(), scale=0.0)


class TestPolygonArea:
    def test_square_area(self):
        assert polygon_area(square()) == pytest.approx(2.0, rel=1e-12)

    def test_regular_hexagon_matches_shoelace_oracle(self):
        # Independent closed form: 3*sqrt(3)/2 for a unit-radius hexagon.
        assert polygon_area(regular_polygon(6)) == pytest.approx(
            3.0 * math.sqrt(3.0) / 2.0, rel=1e-12
        )

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            shape = random_star_shape(rng)
            s = float(rng.uniform(0.5, 3.0))
            scaled = PolygonShape(tuple((r * s, a) for r, a in shape.vertices))
            assert polygon_area(scaled) == pytest.approx(
                polygon_area(shape) * s * s, rel=1e-9
            )


class TestNormalizeArea:
    def test_square_to_quadruple_area_doubles_radii(self):
        result = normalize_area(square(), 8.0)
        assert np.allclose(result.radii, 2.0, atol=1e-12)

    def test_identity_target(self):
        shape = square()
        result = normalize_area(shape, polygon_area(shape))
        assert np.allclose(result.radii, shape.radii, atol=1e-12)

    def test_hexagon_to_unit_area(self):
        result = normalize_area(regular_polygon(6), 1.0)
        assert abs(polygon_area(result) - 1.0) <= 1e-9

    def test_idempotent_within_1e12(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            shape = random_star_shape(rng)
            target = float(rng.uniform(0.1, 5.0))
            once = normalize_area(shape, target)
            twice = normalize_area(once, target)
            assert np.all(np.abs(twice.radii - once.radii) <= 1e-12 * once.radii)

    def test_nonpositive_target_rejected(self):
        with pytest.raises(ValueError):
            normalize_area(square(), 0.0)


class TestRasterize:
    def test_square_covers_whole_rect(self):
        mask = rasterize(square(), Rect(0, 0, 8, 8), (8, 8))
        assert mask.popcount == 64

    def test_right_triangle_matches_oracle(self):
        # Right triangle about its centroid: vertices (2,-1), (-1,2), (-1,-1).
        verts = [(2.0, -1.0), (-1.0, 2.0), (-1.0, -1.0)]
        polar = sorted(
            ((math.hypot(x, y), math.atan2(y, x) % (2 * math.pi)) for x, y in verts),
            key=lambda v: v[1],
        )
        shape = PolygonShape(tuple(polar))
        assert validate(shape) == []
        placement = Rect(0.0, 0.0, 4.0, 4.0)
        mask = rasterize(shape, placement, (4, 4))
        scale = math.sqrt(placement.area / polygon_area(shape))
        xy = to_cartesian(shape, placement.center, scale)
        assert np.array_equal(mask.bits, oracle_rasterize(xy, 4, 4))

    def test_placement_outside_image_is_empty(self):
        mask = rasterize(square(), Rect(100.0, 100.0, 8.0, 8.0), (16, 16))
        assert mask.popcount == 0

    def test_empty_placement_rejected(self):
        with pytest.raises(ValueError, match="empty placement"):
            rasterize(square(), Rect(0, 0, 0.0, 4.0), (8, 8))

    def test_matches_oracle_on_random_shapes(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            shape = random_star_shape(rng)
            size = int(rng.integers(8, 64))
            rect = Rect(
                float(rng.uniform(-5, size - 5)),
                float(rng.uniform(-5, size - 5)),
                float(rng.uniform(2, size)),
                float(rng.uniform(2, size)),
            )
            mask = rasterize(shape, rect, (size, size))
            scale = math.sqrt(rect.area / polygon_area(shape))
            xy = to_cartesian(shape, rect.center, scale)
            assert np.array_equal(mask.bits, oracle_rasterize(xy, size, size))

    def test_popcount_tracks_continuous_area(self):
        rng = np.random.default_rng(5)
        checked = 0
        for _ in range(60):
            shape = random_star_shape(rng)
            # Raster sized to hold the area-matched polygon without clipping
            # (clipping would drop pixels the continuous area still counts).
            scale = math.sqrt(1600.0 / polygon_area(shape))
            extent = float(np.max(np.abs(to_cartesian(shape, (0, 0), scale)))) + 2.0
            size = int(math.ceil(2.0 * extent))
            rect = Rect(extent - 20.0, extent - 20.0, 40.0, 40.0)
            mask = rasterize(shape, rect, (size, size))
            if mask.popcount >= 400:
                assert abs(mask.popcount - rect.area) <= 0.05 * rect.area
                checked += 1
        assert checked > 30


class TestMaskIou:
    @staticmethod
    def _mask(bits):
        bits = np.asarray(bits, dtype=bool)
        return BitMask(width=bits.shape[1], height=bits.shape[0], bits=bits)

    def test_identical_masks(self):
        mask = rasterize(square(), Rect(1, 1, 5, 5), (8, 8))
        assert mask_iou(mask, mask) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((4, 8), dtype=bool)
        b = np.zeros((4, 8), dtype=bool)
        a[:, :3] = True
        b[:, 5:] = True
        assert mask_iou(self._mask(a), self._mask(b)) == 0.0

    def test_half_overlapping_squares(self):
        # Two 2x4 blocks sharing half their area: IoU = 4 / 12.
        a = np.zeros((2, 6), dtype=bool)
        b = np.zeros((2, 6), dtype=bool)
        a[:, 0:4] = True
        b[:, 2:6] = True
        assert mask_iou(self._mask(a), self._mask(b)) == pytest.approx(1.0 / 3.0)

    def test_both_empty_convention(self):
        a = np.zeros((4, 4), dtype=bool)
        assert mask_iou(self._mask(a), self._mask(a)) == 1.0

    def test_dimension_mismatch(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 5), dtype=bool)
        with pytest.raises(ValueError, match="dimension"):
            mask_iou(self._mask(a), self._mask(b))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_and_identity(self, seed):
        rng = np.random.default_rng(seed)
        a = self._mask(rng.random((6, 6)) < 0.4)
        b = self._mask(rng.random((6, 6)) < 0.4)
        assert mask_iou(a, b) == mask_iou(b, a)
        if a.popcount:
            assert mask_iou(a, a) == 1.0


class TestShapeJson:
    def test_round_trip(self, tmp_path):
        shape = random_star_shape(np.random.default_rng(6))
        path = tmp_path / "shape.json"
        save_shape(shape, path)
        loaded = load_shape(path)
        assert loaded.vertices == shape.vertices

    def test_reader_rejects_invalid(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"vertices": [[1.0, 0.0], [1.0, 0.0], [1.0, 2.0]]}))
        with pytest.raises(ValueError, match="angles strictly increasing"):
            load_shape(path)

    def test_reader_rejects_missing_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"points": []}))
        with pytest.raises(ValueError, match="vertices"):
            load_shape(path)
