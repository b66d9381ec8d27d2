"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test prints a single [acceptance] PASS line on success (run with -s
or look at captured output). Everything runs on generated fixtures; no
external data or models are required.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import oracle_rasterize, random_star_shape
from dualpatch.cli import main
from dualpatch.detect import (
    CoverageMockDetector,
    SmoothColorDetector,
    mock_coverage_confidence,
    smooth_color_confidence,
)
from dualpatch.fixtures import generate_fixtures
from dualpatch.geometry import (
    BitMask,
    Rect,
    normalize_area,
    polygon_area,
    rasterize,
    regular_polygon,
    to_cartesian,
)
from dualpatch.harness import asr, load_dataset
from dualpatch.render import (
    INFRARED,
    VISIBLE,
    EotTransform,
    HotParams,
    ImagePlane,
    PatchSpec,
    TextureGrid,
    apply_infrared,
    apply_transform,
    apply_visible,
    build_paste_plan,
    paste_values,
    placement_rect,
)
from dualpatch.texture_opt import (
    TextureOptConfig,
    _RenderSetup,
    optimize_texture,
    texture_loss_and_grad,
    tv_loss,
)

BUDGET = 0.30


def report(criterion: int, text: str) -> None:
    print(f"[acceptance] criterion {criterion}: PASS — {text}")


@pytest.fixture(scope="module")
def fixture_50(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept-50")
    generate_fixtures(out, n_frames=50, seed=1234, image_size=(320, 240))
    return load_dataset(out / "manifest.jsonl")


@pytest.fixture(scope="module")
def fixture_10(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept-10")
    generate_fixtures(out, n_frames=10, seed=4321, image_size=(320, 240))
    return load_dataset(out / "manifest.jsonl")


def test_criterion_1_geometry_oracle_equivalence():
    rng = np.random.default_rng(101)
    start = time.monotonic()
    for _ in range(100):
        shape = random_star_shape(rng)
        for size in (16, 32, 64):
            rect = Rect(
                float(rng.uniform(-4, size * 0.6)),
                float(rng.uniform(-4, size * 0.6)),
                float(rng.uniform(2, size * 0.7)),
                float(rng.uniform(2, size * 0.7)),
            )
            mask = rasterize(shape, rect, (size, size))
            scale = math.sqrt(rect.area / polygon_area(shape))
            xy = to_cartesian(shape, rect.center, scale)
            assert np.array_equal(mask.bits, oracle_rasterize(xy, size, size))
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    report(1, f"100 shapes x 3 grids bit-exact vs brute force in {elapsed:.2f}s")


def test_criterion_2_area_control():
    rng = np.random.default_rng(102)
    worst_pop = 0.0
    checked_pop = 0
    for _ in range(1000):
        shape = random_star_shape(rng)
        target = float(rng.uniform(0.05, 10.0))
        normalized = normalize_area(shape, target)
        assert abs(polygon_area(normalized) - target) <= 1e-9 * target
    for _ in range(80):
        shape = random_star_shape(rng)
        scale = math.sqrt(1600.0 / polygon_area(shape))
        extent = float(np.max(np.abs(to_cartesian(shape, (0, 0), scale)))) + 2.0
        size = int(math.ceil(2.0 * extent))
        rect = Rect(extent - 20.0, extent - 20.0, 40.0, 40.0)
        mask = rasterize(shape, rect, (size, size))
        if mask.popcount >= 400:
            rel = abs(mask.popcount - rect.area) / rect.area
            worst_pop = max(worst_pop, rel)
            checked_pop += 1
            assert rel <= 0.05
    assert checked_pop >= 40
    report(2, f"1000 normalizations within 1e-9; worst popcount error "
              f"{worst_pop:.4f} over {checked_pop} rasters")


def test_criterion_3_asr_formula_exactness():
    assert asr(100, 20) == 0.8
    assert asr(50, 50) == 0.0
    assert asr(10, 12) == -0.2
    with pytest.raises(ValueError):
        asr(0, 0)
    with pytest.raises(ValueError):
        asr(0, 5)
    report(3, "asr(100,20)=0.8, asr(50,50)=0, asr(10,12)=-0.2, asr(0,.) raises")


def test_criterion_4_mock_detector_threshold():
    width = height = 220
    box = Rect(10.0, 10.0, 200.0, 200.0)
    box_pixels = 200 * 200

    def score_for(covered: int) -> float:
        bits = np.zeros((height, width), dtype=bool)
        flat = np.zeros(box_pixels, dtype=bool)
        flat[:covered] = True
        bits[10:210, 10:210] = flat.reshape(200, 200)
        mask = BitMask(width=width, height=height, bits=bits)
        return mock_coverage_confidence(box, mask)

    lo, hi = 0, box_pixels // 4  # score(lo) = 0.9, score(hi) = 0.0
    assert score_for(lo) >= 0.5 > score_for(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if score_for(mid) >= 0.5:
            lo = mid
        else:
            hi = mid
    crossing = hi / box_pixels
    expected = 0.25 * (1.0 - 0.5 / 0.9)
    assert abs(crossing - expected) <= 1e-4
    assert abs(crossing - 0.1111) <= 1e-4
    report(4, f"bisection crossing at coverage {crossing:.6f} "
              f"(closed form {expected:.6f})")


def test_criterion_5_shape_search_effectiveness(fixture_50):
    from dualpatch.shape_search import SearchConfig, search

    config = SearchConfig(
        generations=30, population=16, top_k=4, seed=77,
        area_fraction=BUDGET, workers=1,
    )
    start = time.monotonic()
    result = search(fixture_50, CoverageMockDetector(), config)
    elapsed = time.monotonic() - start
    curve = result.best_asr_curve
    assert elapsed < 60.0
    assert len(curve) == 30
    assert all(a <= b for a, b in zip(curve, curve[1:]))
    assert curve[-1] >= 0.95
    report(5, f"best ASR {curve[-1]:.3f} in {elapsed:.1f}s, monotone curve")


def test_criterion_6_texture_optimization(fixture_10):
    shape = normalize_area(regular_polygon(8), BUDGET)
    detector = SmoothColorDetector()
    config = TextureOptConfig(steps=200, lambda_tv=0.0, eot_samples=4, seed=5)
    start = time.monotonic()
    texture, reports = optimize_texture(
        shape, fixture_10, detector, config, area_fraction=BUDGET
    )
    elapsed = time.monotonic() - start
    assert elapsed < 120.0

    patch = PatchSpec(shape, texture, BUDGET)
    confidences = []
    for frame in fixture_10.frames:
        plane = frame.visible
        for person in frame.persons:
            plane = apply_visible(plane, patch, person)
        for person in frame.persons:
            confidences.append(smooth_color_confidence(plane.values, person))
    assert all(c < 0.5 for c in confidences)
    assert float(np.mean(confidences)) < 0.5

    # Analytic vs central-difference gradient at 20 random coordinates.
    rng = np.random.default_rng(606)
    setup = _RenderSetup(shape, fixture_10.frames[:3], BUDGET, (32, 32))
    tex = np.clip(0.5 + 0.1 * rng.standard_normal((32, 32, 3)), 0.05, 0.95)
    transforms = [EotTransform(0.2, 1.05, 0.04, 0.6)]
    _, _, grad = texture_loss_and_grad(tex, setup, detector, transforms)
    order = np.argsort(np.abs(grad).ravel())[::-1][:1000]
    probes = order[rng.permutation(len(order))[:20]]
    eps = 1e-6
    worst_rel = 0.0
    for flat in probes:
        i, j, c = np.unravel_index(flat, grad.shape)
        tp = tex.copy()
        tp[i, j, c] += eps
        tm = tex.copy()
        tm[i, j, c] -= eps
        lp, _, _ = texture_loss_and_grad(tp, setup, detector, transforms, want_grad=False)
        lm, _, _ = texture_loss_and_grad(tm, setup, detector, transforms, want_grad=False)
        fd = (lp - lm) / (2 * eps)
        rel = abs(fd - grad[i, j, c]) / max(abs(fd), 1e-12)
        worst_rel = max(worst_rel, rel)
        assert rel <= 1e-4
    report(6, f"worst confidence {max(confidences):.3f} < 0.5 in {elapsed:.1f}s; "
              f"worst gradient error {worst_rel:.2e}")


def test_criterion_7_tv_loss_values():
    assert tv_loss(np.full((64, 64, 3), 0.25)) <= 2e-4
    grid = np.array([[0.0, 1.0], [0.0, 1.0]])[:, :, None]
    assert tv_loss(grid) == pytest.approx(0.50005, abs=1e-4)
    rng = np.random.default_rng(107)
    for _ in range(20):
        tex = rng.uniform(0, 1, (31, 17, 3))
        transposed = np.ascontiguousarray(np.swapaxes(tex, 0, 1))
        assert tv_loss(tex) == tv_loss(transposed)
    report(7, "constant <= 2e-4, 2x2 fixture = 0.50005, transpose exact")


def test_criterion_8_eot_identity():
    rng = np.random.default_rng(108)
    frame = ImagePlane(rng.uniform(0, 1, (64, 64, 3)), VISIBLE)
    texture = TextureGrid(rng.uniform(0, 1, (16, 16, 3)))
    shape = normalize_area(random_star_shape(rng), BUDGET)
    patch = PatchSpec(shape, texture, BUDGET)
    box = Rect(18.0, 6.0, 26.0, 52.0)

    # Identity transform: pasted frame is bit-identical to pasting the
    # untransformed texture directly.
    via_eot = apply_visible(frame, patch, box, EotTransform())
    plan = build_paste_plan(shape, box, BUDGET, frame.size, (16, 16))
    direct = paste_values(frame.values, plan, texture.values)
    assert np.array_equal(via_eot.values, direct)
    transformed = apply_transform(texture, EotTransform())
    assert np.array_equal(transformed.values, texture.values)

    bright = apply_transform(TextureGrid.uniform(0.5, (16, 16)),
                             EotTransform(brightness_delta=0.1))
    assert np.max(np.abs(bright.values - 0.6)) <= 1e-9
    report(8, "identity EOT bit-exact; brightness 0.5 + 0.1 -> 0.6 within 1e-9")


def test_criterion_9_end_to_end_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-fixtures", "--out", str(data), "--frames", "6", "--seed", "6"]) == 0
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({
        "seed": 23,
        "dataset": {"manifest": str(data / "manifest.jsonl")},
        "detectors": {
            "visible": {"type": "smooth_color"},
            "infrared": {"type": "coverage_mock"},
        },
        "shape_search": {"generations": 3, "population": 6, "top_k": 2},
        "texture_opt": {"steps": 10, "eot_samples": 2, "texture_size": [32, 32]},
    }))
    outputs = {}
    for run in ("one", "two"):
        out = tmp_path / run
        code = main(["pipeline", "--config", str(config_path),
                     "--out", str(out), "--workers", "1"])
        assert code == 0
        outputs[run] = {
            rel: (out / rel).read_bytes()
            for rel in (
                "patches/patch_000/shape.json",
                "patches/patch_000/texture.png",
                "eval/report.json",
            )
        }
    assert outputs["one"] == outputs["two"]
    report(9, "pipeline run twice: shape.json, texture.png, report.json byte-identical")


def test_criterion_10_dual_modal_consistency():
    rng = np.random.default_rng(110)
    shape = normalize_area(random_star_shape(rng), BUDGET)
    red = np.zeros((16, 16, 3))
    red[:, :, 0] = 1.0
    patch = PatchSpec(shape, TextureGrid(red), BUDGET)
    box = Rect(20.0, 8.0, 28.0, 56.0)

    visible = ImagePlane(np.full((80, 80, 3), 0.3), VISIBLE)
    infrared = ImagePlane(np.full((80, 80), 0.2), INFRARED)

    vis_out = apply_visible(visible, patch, box, EotTransform())
    ir_out = apply_infrared(infrared, patch.shape, box, HotParams(v_hot=0.9),
                            patch.area_fraction)

    vis_changed = np.any(vis_out.values != visible.values, axis=2)
    ir_changed = ir_out.values != infrared.values
    assert vis_changed.any()
    assert np.array_equal(vis_changed, ir_changed)

    _, anchor = placement_rect(box, patch.area_fraction)
    mask = rasterize(shape, anchor, visible.size)
    assert np.array_equal(vis_changed, mask.bits)
    report(10, "infrared and visible renders modify the identical pixel set")
