"""Synthetic dual-modal dataset generator.

Emits frames the built-in oracle detectors respond to: visible persons are
rectangles colored near the smooth-color detector's reference color (so
clean frames are confidently detected), infrared persons are warm blobs
below the coverage detector's hot threshold. Everything is deterministic
under the seed; the manifest matches the harness format exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .render import INFRARED, VISIBLE, ImagePlane, save_image

DEFAULT_IMAGE_SIZE = (320, 240)  # (width, height)


def _place_boxes(rng: np.random.Generator, width: int, height: int, count: int):
    """Non-overlapping person boxes, aspect-constrained so the patch anchor
    always fits inside the box (h in [1.6w, 2.4w])."""
    boxes: list[tuple[int, int, int, int]] = []
    for _ in range(count):
        for _attempt in range(60):
            w = int(rng.integers(30, 47))
            h = int(round(w * rng.uniform(1.6, 2.4)))
            if w + 8 >= width or h + 8 >= height:
                continue
            x = int(rng.integers(4, width - w - 4))
            y = int(rng.integers(4, height - h - 4))
            if all(
                x + w + 2 <= bx or bx + bw + 2 <= x or y + h + 2 <= by or bh + by + 2 <= y
                for bx, by, bw, bh in boxes
            ):
                boxes.append((x, y, w, h))
                break
    return boxes


def generate_fixtures(
    out_dir,
    n_frames: int = 50,
    seed: int = 0,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    max_persons: int = 3,
    modalities: tuple[str, ...] = (VISIBLE, INFRARED),
) -> Path:
    """Write images/ plus manifest.jsonl under out_dir; returns manifest path."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    out_dir = Path(out_dir)
    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    width, height = image_size
    rng = np.random.default_rng(seed)

    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as manifest:
        for idx in range(n_frames):
            frame_id = f"frame_{idx:04d}"
            n_persons = int(rng.integers(1, max_persons + 1))
            boxes = _place_boxes(rng, width, height, n_persons)
            # Colors drawn regardless of modality selection to keep the
            # stream stable when only one modality is generated.
            vis_bg = rng.uniform(0.28, 0.42, size=3)
            ir_bg = float(rng.uniform(0.15, 0.25))
            body_colors = [rng.uniform(0.42, 0.58, size=3) for _ in boxes]
            ir_bodies = [float(rng.uniform(0.55, 0.68)) for _ in boxes]

            record: dict = {"id": frame_id, "visible": None, "infrared": None}
            if VISIBLE in modalities:
                vis = np.tile(vis_bg, (height, width, 1))
                for (x, y, w, h), color in zip(boxes, body_colors):
                    vis[y : y + h, x : x + w, :] = color
                rel = f"images/{frame_id}_vis.png"
                save_image(ImagePlane(vis, VISIBLE), out_dir / rel)
                record["visible"] = rel
            if INFRARED in modalities:
                ir = np.full((height, width), ir_bg)
                for (x, y, w, h), warm in zip(boxes, ir_bodies):
                    ir[y : y + h, x : x + w] = warm
                rel = f"images/{frame_id}_ir.png"
                save_image(ImagePlane(ir, INFRARED), out_dir / rel)
                record["infrared"] = rel

            record["persons"] = [{"bbox": [x, y, w, h]} for x, y, w, h in boxes]
            manifest.write(json.dumps(record, sort_keys=True) + "\n")
    return manifest_path
