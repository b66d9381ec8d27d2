"""Evolutionary search over patch shapes against an infrared detector.

The objective (person-level attack success rate) is non-differentiable, so
shapes evolve under four mutation operators: radius perturbation, angle
perturbation, vertex insertion, vertex deletion. Elitist selection keeps
the best-so-far curve monotone; the final archive is a greedy top-K by ASR
filtered for diversity via rasterized mask IoU.
"""

from __future__ import annotations

import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .detect import DetectorAdapter
from .geometry import (
    K_MAX_DEFAULT,
    PolygonShape,
    Rect,
    mask_iou,
    normalize_area,
    rasterize,
    regular_polygon,
    shape_from_dict,
    shape_to_dict,
    validate,
)
from .harness import DualFrame, DatasetStore, match_persons
from .render import INFRARED, HotParams, ImagePlane, placement_rect

INIT_VERTEX_COUNTS = (4, 6, 8, 12)

# Canonical raster for diversity comparison: shapes are rendered into a
# centered anchor so the IoU is independent of any particular dataset.
CANON_RASTER = (64, 64)
CANON_ANCHOR = Rect(12.0, 12.0, 40.0, 40.0)


@dataclass(frozen=True)
class SearchConfig:
    generations: int = 30
    population: int = 16
    top_k: int = 4
    diversity_iou: float = 0.5
    sigma_radius: float = 0.2
    sigma_angle: float = 0.15
    k_min: int = 3
    k_max: int = K_MAX_DEFAULT
    seed: int = 0
    area_fraction: float = 0.30
    iou_min: float = 0.5
    score_min: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.generations < 1 or self.population < 1 or self.top_k < 1:
            raise ValueError("generations, population, and top_k must be >= 1")
        if not 0.0 < self.diversity_iou <= 1.0:
            raise ValueError("diversity_iou must lie in (0, 1]")
        if self.top_k > self.population:
            raise ValueError("top_k must not exceed population size")
        if self.k_min < 3 or self.k_max < self.k_min:
            raise ValueError("need 3 <= k_min <= k_max")
        if not 0.0 < self.area_fraction <= 0.30:
            raise ValueError("area_fraction must lie in (0, 0.30]")


@dataclass(frozen=True)
class ShapeCandidate:
    shape: PolygonShape
    asr: float
    generation: int
    lineage_id: int

    def to_dict(self) -> dict:
        d = shape_to_dict(self.shape)
        d.update(asr=self.asr, generation=self.generation, lineage_id=self.lineage_id)
        return d

    @staticmethod
    def from_dict(data: dict) -> "ShapeCandidate":
        return ShapeCandidate(
            shape=shape_from_dict({"vertices": data["vertices"]}, k_max=np.inf),
            asr=float(data["asr"]),
            generation=int(data["generation"]),
            lineage_id=int(data["lineage_id"]),
        )


@dataclass
class SearchResult:
    archive: list[ShapeCandidate]
    best_asr_curve: list[float]
    evaluations: int


def _rank_key(candidate: ShapeCandidate):
    # Equal ASR ties break toward the older lineage for determinism.
    return (-candidate.asr, candidate.lineage_id)


def _apply_operator(shape: PolygonShape, op: str, rng: np.random.Generator,
                    config: SearchConfig) -> PolygonShape:
    verts = list(shape.vertices)
    k = len(verts)
    if op == "radius":
        idx = int(rng.integers(k))
        r, a = verts[idx]
        verts[idx] = (r * math.exp(float(rng.normal(0.0, config.sigma_radius))), a)
    elif op == "angle":
        idx = int(rng.integers(k))
        r, a = verts[idx]
        verts[idx] = (r, a + float(rng.normal(0.0, config.sigma_angle)))
    elif op == "insert":
        edge = int(rng.integers(k))
        r1, a1 = verts[edge]
        r2, a2 = verts[(edge + 1) % k]
        mx = (r1 * math.cos(a1) + r2 * math.cos(a2)) / 2.0
        my = (r1 * math.sin(a1) + r2 * math.sin(a2)) / 2.0
        verts.append((math.hypot(mx, my), math.atan2(my, mx) % (2.0 * math.pi)))
        verts.sort(key=lambda v: v[1])
    elif op == "delete":
        idx = int(rng.integers(k))
        del verts[idx]
    else:
        raise ValueError(f"unknown mutation operator {op!r}")
    return PolygonShape(tuple(verts))


def _feasible_operators(k: int, config: SearchConfig) -> list[str]:
    ops = ["radius", "angle"]
    if k < config.k_max:
        ops.append("insert")
    if k > config.k_min:
        ops.append("delete")
    return ops


def mutate(shape: PolygonShape, rng: np.random.Generator, config: SearchConfig,
           op: str | None = None) -> PolygonShape:
    """Apply one mutation operator and re-normalize to the area budget.

    Invalid intermediates (broken ordering, gap >= pi, duplicate angle)
    are resampled up to 100 times, then the radius operator is used as a
    guaranteed-valid fallback. The result always validates.
    """
    if op is None:
        ops = _feasible_operators(shape.vertex_count, config)
        op = ops[int(rng.integers(len(ops)))]
    for _attempt in range(100):
        candidate = _apply_operator(shape, op, rng, config)
        if validate(candidate, config.k_max):
            continue  # broken ordering/gap/duplicate: resample
        return normalize_area(candidate, config.area_fraction)
    fallback = _apply_operator(shape, "radius", rng, config)
    return normalize_area(fallback, config.area_fraction)


def _infrared_plane(frame: DualFrame) -> ImagePlane:
    plane = frame.plane(INFRARED)
    if plane is None:
        raise ValueError(f"frame {frame.id!r} has no infrared plane")
    return plane


def evaluate_shape(
    shape: PolygonShape,
    frames: list[DualFrame],
    detector: DetectorAdapter,
    area_fraction: float,
    hot: HotParams = HotParams(),
    iou_min: float = 0.5,
    score_min: float = 0.5,
) -> float:
    """Person-level ASR of the shape rendered hot onto every person."""
    if detector.modality != INFRARED:
        raise ValueError("shape evaluation requires an infrared detector")
    if not frames:
        raise ValueError("empty dataset")
    attacked = 0
    total = 0
    for frame in frames:
        plane = _infrared_plane(frame)
        values = plane.values.copy()
        for person in frame.persons:
            _, anchor = placement_rect(person, area_fraction)
            mask = rasterize(shape, anchor, plane.size)
            if hot.mode == "fixed":
                values[mask.bits] = hot.v_hot
            else:
                values[mask.bits] = np.clip(values[mask.bits] + hot.delta, 0.0, 1.0)
        detections = detector.detect_frame(ImagePlane(values, INFRARED), list(frame.persons))
        matched = match_persons(frame.persons, detections, iou_min, score_min)
        attacked += sum(1 for m in matched if not m)
        total += len(frame.persons)
    if total == 0:
        raise ValueError("dataset has no annotated persons")
    return attacked / total


def canonical_mask(shape: PolygonShape):
    return rasterize(shape, CANON_ANCHOR, CANON_RASTER)


def _greedy_diverse_topk(pool: list[ShapeCandidate], config: SearchConfig) -> list[ShapeCandidate]:
    picked: list[ShapeCandidate] = []
    picked_masks = []
    for candidate in sorted(pool, key=_rank_key):
        mask = canonical_mask(candidate.shape)
        if all(mask_iou(mask, m) < config.diversity_iou for m in picked_masks):
            picked.append(candidate)
            picked_masks.append(mask)
        if len(picked) == config.top_k:
            break
    return picked


def config_digest(config: SearchConfig) -> str:
    from .config import hash_payload

    payload = asdict(config)
    payload.pop("workers")  # parallelism never changes results
    return hash_payload(payload)


class _SearchState:
    def __init__(self, config: SearchConfig):
        self.rng = np.random.default_rng(config.seed)
        self.next_lineage = 0
        self.population: list[ShapeCandidate] = []
        self.pool: list[ShapeCandidate] = []
        self.best_curve: list[float] = []
        self.next_generation = 0

    def take_lineage(self) -> int:
        value = self.next_lineage
        self.next_lineage += 1
        return value


def _checkpoint_payload(state: _SearchState, digest: str, generation: int) -> dict:
    return {
        "config_hash": digest,
        "generation": generation,
        "next_lineage": state.next_lineage,
        "rng_state": state.rng.bit_generator.state,
        "population": [c.to_dict() for c in state.population],
        "pool": [c.to_dict() for c in state.pool],
        "best_curve": state.best_curve,
    }


def _restore_state(payload: dict, config: SearchConfig) -> _SearchState:
    state = _SearchState(config)
    state.rng.bit_generator.state = payload["rng_state"]
    state.next_lineage = int(payload["next_lineage"])
    state.population = [ShapeCandidate.from_dict(d) for d in payload["population"]]
    state.pool = [ShapeCandidate.from_dict(d) for d in payload["pool"]]
    state.best_curve = [float(v) for v in payload["best_curve"]]
    state.next_generation = int(payload["generation"]) + 1
    return state


def _load_latest_checkpoint(checkpoint_dir: Path, digest: str) -> dict | None:
    best = None
    for path in sorted(checkpoint_dir.glob("gen_*.json")):
        if not re.fullmatch(r"gen_\d{4}\.json", path.name):
            continue
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if payload.get("config_hash") != digest:
            continue
        if best is None or payload["generation"] > best["generation"]:
            best = payload
    return best


def search(
    dataset: DatasetStore | list[DualFrame],
    detector: DetectorAdapter,
    config: SearchConfig,
    hot: HotParams = HotParams(),
    checkpoint_dir=None,
) -> SearchResult:
    """Run the evolutionary shape search; fully deterministic under the seed.

    Writes one checkpoint per generation when checkpoint_dir is given and
    resumes from the newest checkpoint whose config hash matches.
    """
    frames = dataset.frames if isinstance(dataset, DatasetStore) else list(dataset)
    if not frames:
        raise ValueError("empty dataset")
    digest = config_digest(config)

    state = _SearchState(config)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        payload = _load_latest_checkpoint(checkpoint_dir, digest)
        if payload is not None:
            state = _restore_state(payload, config)

    def evaluate_all(shapes: list[PolygonShape]) -> list[float]:
        def one(shape: PolygonShape) -> float:
            return evaluate_shape(
                shape, frames, detector, config.area_fraction, hot,
                config.iou_min, config.score_min,
            )

        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                return list(pool.map(one, shapes))  # index order preserved
        return [one(s) for s in shapes]

    evaluations = 0
    elite_count = max(1, config.population // 4)

    for generation in range(state.next_generation, config.generations):
        if generation == 0:
            seeds: list[PolygonShape] = []
            for i in range(config.population):
                k = INIT_VERTEX_COUNTS[i % len(INIT_VERTEX_COUNTS)]
                k = min(max(k, config.k_min), config.k_max)
                shape = normalize_area(regular_polygon(k), config.area_fraction)
                for _ in range(i // len(INIT_VERTEX_COUNTS)):
                    shape = mutate(shape, state.rng, config)
                seeds.append(shape)
            new_shapes = seeds
            survivors: list[ShapeCandidate] = []
        else:
            ranked = sorted(state.population, key=_rank_key)
            survivors = ranked[:elite_count]
            parents = ranked[: max(1, math.ceil(len(ranked) / 2))]
            new_shapes = [
                mutate(parents[int(state.rng.integers(len(parents)))].shape, state.rng, config)
                for _ in range(config.population - len(survivors))
            ]

        asrs = evaluate_all(new_shapes)
        evaluations += len(new_shapes)
        children = [
            ShapeCandidate(shape=s, asr=a, generation=generation,
                           lineage_id=state.take_lineage())
            for s, a in zip(new_shapes, asrs)
        ]
        state.population = survivors + children
        state.pool.extend(children)
        best = min(state.pool, key=_rank_key)
        state.best_curve.append(best.asr)

        if checkpoint_dir is not None:
            payload = _checkpoint_payload(state, digest, generation)
            path = checkpoint_dir / f"gen_{generation:04d}.json"
            path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")

    archive = _greedy_diverse_topk(state.pool, config)
    return SearchResult(archive=archive, best_asr_curve=state.best_curve,
                        evaluations=evaluations)


def save_archive(result: SearchResult, path, config_hash: str = "") -> None:
    # `evaluations` stays out of the payload: it is run-local (a resumed
    # run evaluates fewer candidates) while the archive must be identical.
    payload = {
        "config_hash": config_hash,
        "archive": [c.to_dict() for c in result.archive],
        "best_asr_curve": result.best_asr_curve,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_archive(path) -> tuple[list[ShapeCandidate], dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ShapeCandidate.from_dict(d) for d in payload["archive"]], payload
