"""Gradient-based texture optimization against a visible-spectrum detector.

Minimizes mean matched-person confidence plus a weighted total-variation
penalty under EOT sampling. Gradients flow through the render pipeline via
the adjoints in render.py and the detector's analytic pixel gradients;
updates are projected max-normalized gradient steps with backtracking (the
rate halves on a loss increase, at most backtrack_max times, else the step
is rejected).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .detect import DetectorAdapter
from .geometry import PolygonShape, require_valid, save_shape, load_shape
from .harness import DualFrame, DatasetStore, canonical_json
from .render import (
    VISIBLE,
    EotConfig,
    EotTransform,
    ImagePlane,
    PastePlan,
    PatchSpec,
    TextureGrid,
    apply_transform_tape,
    build_paste_plan,
    load_texture,
    sample_eot,
    save_texture,
    transform_vjp,
)

TV_EPS = 1e-8


@dataclass(frozen=True)
class TextureOptConfig:
    steps: int = 200
    learning_rate: float = 0.03
    lambda_tv: float = 2.5
    eot_samples: int = 4
    seed: int = 0
    texture_size: tuple[int, int] = (128, 128)
    init: str = "gray"  # or "random"
    margin: float = 0.0
    backtrack_max: int = 5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eot_samples < 1:
            raise ValueError("eot_samples must be >= 1")
        if self.lambda_tv < 0.0:
            raise ValueError("lambda_tv must be non-negative")
        if self.init not in ("gray", "random"):
            raise ValueError("init must be 'gray' or 'random'")


@dataclass(frozen=True)
class LossReport:
    step: int
    l_ap: float
    l_tv: float
    total: float
    mean_confidence: float

    def to_dict(self) -> dict:
        return asdict(self)


def tv_loss(values: np.ndarray, eps: float = TV_EPS) -> float:
    """Smoothed anisotropic total variation, averaged over sites and channels.

    Per site: sqrt(right_diff^2 + down_diff^2 + eps); boundary differences
    are zero. math.fsum keeps the reduction exact, so the loss is invariant
    under transposition.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 2:
        v = v[..., None]
    site = _tv_site(v)
    return math.fsum(site.ravel().tolist()) / site.size


def _tv_site(v: np.ndarray) -> np.ndarray:
    dr = np.zeros_like(v)
    dr[:, :-1, :] = v[:, 1:, :] - v[:, :-1, :]
    dd = np.zeros_like(v)
    dd[:-1, :, :] = v[1:, :, :] - v[:-1, :, :]
    return np.sqrt(dr * dr + dd * dd + TV_EPS)


def tv_loss_grad(values: np.ndarray) -> tuple[float, np.ndarray]:
    v = np.asarray(values, dtype=np.float64)
    squeeze = v.ndim == 2
    if squeeze:
        v = v[..., None]
    dr = np.zeros_like(v)
    dr[:, :-1, :] = v[:, 1:, :] - v[:, :-1, :]
    dd = np.zeros_like(v)
    dd[:-1, :, :] = v[1:, :, :] - v[:-1, :, :]
    site = np.sqrt(dr * dr + dd * dd + TV_EPS)
    loss = math.fsum(site.ravel().tolist()) / site.size
    inv = 1.0 / site
    grad = -(dr + dd) * inv
    grad[:, 1:, :] += dr[:, :-1, :] * inv[:, :-1, :]
    grad[1:, :, :] += dd[:-1, :, :] * inv[:-1, :, :]
    grad /= site.size
    if squeeze:
        grad = grad[..., 0]
    return loss, grad


def ap_loss(confidences, margin: float = 0.0) -> float:
    """Mean hinge on matched-person confidence (margin 0: plain mean score)."""
    scores = list(confidences)
    if not scores:
        raise ValueError("ap_loss requires a nonempty batch")
    return sum(max(0.0, s - margin) for s in scores) / len(scores)


class _RenderSetup:
    """Transform-independent per-dataset precomputation: paste plans and
    overwrite ownership for overlapping placements."""

    def __init__(self, shape: PolygonShape, frames: list[DualFrame],
                 area_fraction: float, texture_size: tuple[int, int]):
        self.frames = []
        self.texture_size = texture_size
        for frame in frames:
            plane = frame.plane(VISIBLE)
            if plane is None:
                raise ValueError(f"frame {frame.id!r} has no visible plane")
            plans = [
                build_paste_plan(shape, person, area_fraction, plane.size, texture_size)
                for person in frame.persons
            ]
            # Later pastes overwrite earlier ones; gradient flows only from
            # the final owner of each pixel.
            owner = np.full((plane.height, plane.width), -1, dtype=np.int32)
            for pi, plan in enumerate(plans):
                owner[plan.rows, plan.cols] = pi
            owned_taps = []
            for pi, plan in enumerate(plans):
                keep = owner[plan.rows, plan.cols] == pi
                owned_taps.append(
                    (plan, [(idx[keep], w[keep]) for idx, w in plan.taps],
                     plan.rows[keep], plan.cols[keep])
                )
            self.frames.append((frame, plans, owned_taps))

    @property
    def total_persons(self) -> int:
        return sum(len(f.persons) for f, _, _ in self.frames)


def _render_sample(setup: _RenderSetup, transformed: np.ndarray):
    """Paste the transformed texture into every frame; yields per-frame data."""
    for frame, plans, owned_taps in setup.frames:
        plane = frame.plane(VISIBLE)
        values = plane.values
        if any(plan.pixel_count for plan in plans):
            values = values.copy()
            for plan in plans:
                if plan.pixel_count:
                    values = _paste_inplace(values, plan, transformed)
        yield frame, values, owned_taps


def _paste_inplace(values: np.ndarray, plan: PastePlan, transformed: np.ndarray) -> np.ndarray:
    flat = transformed.reshape(-1, 3)
    sampled = None
    for idx, w in plan.taps:
        contrib = flat[idx] * w[:, None]
        sampled = contrib if sampled is None else sampled + contrib
    # Tap weights can sum to 1 + 1 ulp; keep outputs inside [0, 1].
    values[plan.rows, plan.cols, :] = np.clip(sampled, 0.0, 1.0)
    return values


def texture_loss_and_grad(
    texture: np.ndarray,
    setup: _RenderSetup,
    detector: DetectorAdapter,
    transforms: list[EotTransform],
    margin: float = 0.0,
    want_grad: bool = True,
):
    """Mean ap_loss over transforms (plus gradient w.r.t. texture values).

    Returns (l_ap, mean_confidence, grad or None).
    """
    tex_h, tex_w = setup.texture_size
    n_persons = setup.total_persons
    if n_persons == 0:
        raise ValueError("dataset has no annotated persons")
    grad = np.zeros((tex_h, tex_w, 3), dtype=np.float64) if want_grad else None
    l_ap_sum = 0.0
    score_sum = 0.0
    m = len(transforms)
    for t in transforms:
        transformed, tape = apply_transform_tape(texture, t)
        g_transformed = np.zeros_like(transformed) if want_grad else None
        sample_scores: list[float] = []
        for frame, values, owned_taps in _render_sample(setup, transformed):
            plane = ImagePlane(values, VISIBLE)
            if want_grad:
                results = detector.person_score_grads(plane, list(frame.persons))
                g_frame = np.zeros_like(values)
                for score, g_window, (r0, r1, c0, c1) in results:
                    sample_scores.append(score)
                    if score > margin:
                        g_frame[r0:r1, c0:c1, :] += g_window / (m * n_persons)
                for _plan, taps, rows, cols in owned_taps:
                    if len(rows) == 0:
                        continue
                    g_pixels = g_frame[rows, cols, :]
                    flat = g_transformed.reshape(-1, 3)
                    for idx, w in taps:
                        np.add.at(flat, idx, g_pixels * w[:, None])
            else:
                detections = detector.detect_frame(plane, list(frame.persons))
                sample_scores.extend(d.score for d in detections)
        l_ap_sum += ap_loss(sample_scores, margin)
        score_sum += sum(sample_scores) / len(sample_scores)
        if want_grad:
            grad += transform_vjp(tape, g_transformed)
    return l_ap_sum / m, score_sum / m, grad


def optimize_texture(
    shape: PolygonShape,
    dataset: DatasetStore | list[DualFrame],
    detector: DetectorAdapter,
    config: TextureOptConfig,
    area_fraction: float = 0.30,
    eot_config: EotConfig | None = None,
) -> tuple[TextureGrid, list[LossReport]]:
    """Optimize the texture for a fixed shape; deterministic under the seed."""
    if not detector.differentiable:
        raise ValueError(f"detector {detector.name!r} is not differentiable")
    require_valid(shape)
    frames = dataset.frames if isinstance(dataset, DatasetStore) else list(dataset)
    if not frames:
        raise ValueError("empty dataset")
    eot_config = eot_config or EotConfig()
    rng = np.random.default_rng(config.seed)
    tex_h, tex_w = config.texture_size
    if config.init == "gray":
        texture = np.full((tex_h, tex_w, 3), 0.5, dtype=np.float64)
    else:
        texture = rng.uniform(0.0, 1.0, size=(tex_h, tex_w, 3))

    setup = _RenderSetup(shape, frames, area_fraction, config.texture_size)
    reports: list[LossReport] = []

    def total_loss(tex: np.ndarray, transforms) -> tuple[float, float, float]:
        l_ap, _, _ = texture_loss_and_grad(
            tex, setup, detector, transforms, config.margin, want_grad=False
        )
        l_tv = tv_loss(tex)
        return l_ap + config.lambda_tv * l_tv, l_ap, l_tv

    for step in range(config.steps):
        transforms = [sample_eot(rng, eot_config) for _ in range(config.eot_samples)]
        l_ap, mean_conf, g_ap = texture_loss_and_grad(
            texture, setup, detector, transforms, config.margin, want_grad=True
        )
        l_tv, g_tv = tv_loss_grad(texture)
        total = l_ap + config.lambda_tv * l_tv
        if not math.isfinite(total):
            raise RuntimeError(
                f"non-finite loss at step {step}: l_ap={l_ap}, l_tv={l_tv}"
            )
        reports.append(LossReport(step, l_ap, l_tv, total, mean_conf))

        gradient = g_ap
        if config.lambda_tv != 0.0:
            gradient = gradient + config.lambda_tv * g_tv

        # Max-normalized step: the learning rate is the largest per-pixel
        # travel distance in value units, so defaults stay meaningful no
        # matter how many box pixels the loss averages over. Unlike a raw
        # sign step this preserves relative gradient structure, which the
        # total-variation term needs to act as a smoother.
        peak = float(np.max(np.abs(gradient)))
        direction = gradient / peak if peak > 0.0 else gradient
        lr = config.learning_rate
        for _attempt in range(config.backtrack_max + 1):
            candidate = np.clip(texture - lr * direction, 0.0, 1.0)
            cand_total, _, _ = total_loss(candidate, transforms)
            if cand_total <= total:
                texture = candidate
                break
            lr *= 0.5
        # All halvings increased the loss: reject the step entirely.

    return TextureGrid(texture), reports


# ---------------------------------------------------------------------------
# Patch artifact directory


def write_patch_artifact(
    out_dir,
    shape: PolygonShape,
    texture: TextureGrid,
    area_fraction: float,
    meta: dict,
) -> Path:
    """Write shape.json, texture.png, and meta.json under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_shape(shape, out_dir / "shape.json")
    save_texture(texture, out_dir / "texture.png")
    payload = dict(meta)
    payload["area_fraction"] = area_fraction
    (out_dir / "meta.json").write_text(canonical_json(payload), encoding="utf-8")
    return out_dir


def load_patch_artifact(artifact_dir) -> tuple[PatchSpec, dict]:
    artifact_dir = Path(artifact_dir)
    meta = json.loads((artifact_dir / "meta.json").read_text(encoding="utf-8"))
    shape = load_shape(artifact_dir / "shape.json")
    texture = load_texture(artifact_dir / "texture.png")
    patch = PatchSpec(shape=shape, texture=texture,
                      area_fraction=float(meta["area_fraction"]))
    return patch, meta
