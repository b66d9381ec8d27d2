"""Dataset ingestion, person matching, the ASR metric, and evaluation.

The dataset manifest is JSON Lines, one record per frame:
    {"id": str, "visible": path|null, "infrared": path|null,
     "persons": [{"bbox": [x, y, w, h]}, ...]}
Paths are relative to the manifest, pixel units, origin top-left.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detect import PERSON_CLASS, AdapterError, Detection, DetectorAdapter
from .geometry import Rect
from .render import (
    INFRARED,
    VISIBLE,
    EotConfig,
    EotTransform,
    HotParams,
    ImagePlane,
    PatchSpec,
    apply_infrared,
    apply_visible,
    load_image,
    sample_eot,
)

DEFAULT_IOU_MIN = 0.5
DEFAULT_SCORE_MIN = 0.5


class ManifestError(ValueError):
    """A dataset manifest record is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class DualFrame:
    """One dataset element: aligned visible/infrared planes plus person boxes."""

    id: str
    visible: ImagePlane | None
    infrared: ImagePlane | None
    persons: tuple[Rect, ...]

    def __post_init__(self):
        if self.visible is None and self.infrared is None:
            raise ValueError(f"frame {self.id!r}: at least one modality required")
        if self.visible is not None and self.infrared is not None:
            if self.visible.size != self.infrared.size:
                raise ValueError(f"frame {self.id!r}: aligned modalities must share dimensions")
        width, height = self.size
        for i, box in enumerate(self.persons):
            if box.w <= 0 or box.h <= 0:
                raise ValueError(f"frame {self.id!r}: person {i} box must have positive size")
            if box.x < 0 or box.y < 0 or box.x + box.w > width or box.y + box.h > height:
                raise ValueError(f"frame {self.id!r}: person {i} box exceeds image bounds")

    @property
    def size(self) -> tuple[int, int]:
        plane = self.visible if self.visible is not None else self.infrared
        assert plane is not None
        return plane.size

    def plane(self, modality: str) -> ImagePlane | None:
        return self.visible if modality == VISIBLE else self.infrared


@dataclass
class DatasetStore:
    frames: list[DualFrame]
    manifest_path: str

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def modalities(self) -> list[str]:
        present = []
        for modality in (VISIBLE, INFRARED):
            if any(f.plane(modality) is not None for f in self.frames):
                present.append(modality)
        return present


_RECORD_KEYS = {"id", "visible", "infrared", "persons"}


def load_dataset(manifest_path) -> DatasetStore:
    """Load and validate a JSONL manifest; errors name the frame and line."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ManifestError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    frames: list[DualFrame] = []
    seen_ids: set[str] = set()
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ManifestError(f"line {lineno}: record must be an object")
            unknown = set(record) - _RECORD_KEYS
            if unknown:
                raise ManifestError(f"line {lineno}: unknown key(s) {sorted(unknown)}")
            if "id" not in record or "persons" not in record:
                raise ManifestError(f"line {lineno}: record requires 'id' and 'persons'")
            frame_id = str(record["id"])
            if frame_id in seen_ids:
                raise ManifestError(f"line {lineno}: frame {frame_id!r} violates 'ids unique'")
            seen_ids.add(frame_id)

            planes = {}
            for modality in (VISIBLE, INFRARED):
                rel = record.get(modality)
                if rel is None:
                    planes[modality] = None
                    continue
                path = base / rel
                if not path.exists():
                    raise ManifestError(
                        f"line {lineno}: frame {frame_id!r}: missing file {path}"
                    )
                planes[modality] = load_image(path, modality)

            persons = []
            for i, person in enumerate(record["persons"]):
                if not isinstance(person, dict) or set(person) != {"bbox"}:
                    raise ManifestError(
                        f"line {lineno}: frame {frame_id!r}: person {i} must be "
                        '{"bbox": [x, y, w, h]}'
                    )
                bbox = person["bbox"]
                if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
                    raise ManifestError(
                        f"line {lineno}: frame {frame_id!r}: person {i} bbox must have 4 entries"
                    )
                persons.append(Rect(*(float(v) for v in bbox)))

            try:
                frames.append(
                    DualFrame(
                        id=frame_id,
                        visible=planes[VISIBLE],
                        infrared=planes[INFRARED],
                        persons=tuple(persons),
                    )
                )
            except ValueError as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
    if not frames:
        raise ManifestError(f"manifest {manifest_path} contains no frames")
    return DatasetStore(frames=frames, manifest_path=str(manifest_path))


def box_iou(a: Rect, b: Rect) -> float:
    inter = a.intersect(b).area
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def match_persons(
    person_boxes,
    detections: list[Detection],
    iou_min: float = DEFAULT_IOU_MIN,
    score_min: float = DEFAULT_SCORE_MIN,
) -> list[bool]:
    """Greedy person matching by descending detection score.

    A person is matched by a person-class detection with score >= score_min
    and IoU >= iou_min; each detection may claim at most one person.
    """
    matched = [False] * len(person_boxes)
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    for det_idx in order:
        det = detections[det_idx]
        if det.class_id != PERSON_CLASS or det.score < score_min:
            continue
        best_person = -1
        best_iou = iou_min
        for p_idx, box in enumerate(person_boxes):
            if matched[p_idx]:
                continue
            iou = box_iou(box, det.box)
            if iou > best_iou or (iou == best_iou and iou >= iou_min and best_person == -1):
                best_person = p_idx
                best_iou = iou
        if best_person >= 0:
            matched[best_person] = True
    return matched


def match_person(
    person_box: Rect,
    detections: list[Detection],
    iou_min: float = DEFAULT_IOU_MIN,
    score_min: float = DEFAULT_SCORE_MIN,
) -> bool:
    return match_persons([person_box], detections, iou_min, score_min)[0]


def asr(n_clean: int, n_patch: int) -> float:
    """(N_clean - N_patch) / N_clean; negative when the patch helps detection."""
    if n_clean <= 0:
        raise ValueError("n_clean must be positive")
    if n_patch < 0:
        raise ValueError("n_patch must be non-negative")
    return (n_clean - n_patch) / n_clean


@dataclass
class EvalReport:
    """Per-modality ASR summary plus per-frame detail rows."""

    modalities: dict
    rows: list = field(default_factory=list)
    config_hash: str = ""
    patch_ref: str = ""

    def to_dict(self) -> dict:
        return {
            "modalities": self.modalities,
            "rows": self.rows,
            "config_hash": self.config_hash,
            "patch_ref": self.patch_ref,
        }

    @staticmethod
    def from_dict(data: dict) -> "EvalReport":
        return EvalReport(
            modalities=data["modalities"],
            rows=data["rows"],
            config_hash=data.get("config_hash", ""),
            patch_ref=data.get("patch_ref", ""),
        )


def _render_patched(
    frame: DualFrame,
    modality: str,
    patch: PatchSpec,
    transforms: list[EotTransform],
    hot: HotParams,
) -> ImagePlane:
    plane = frame.plane(modality)
    assert plane is not None
    for person, t in zip(frame.persons, transforms):
        if modality == VISIBLE:
            plane = apply_visible(plane, patch, person, t)
        else:
            plane = apply_infrared(plane, patch.shape, person, hot, patch.area_fraction)
    return plane


def evaluate_patch(
    patch: PatchSpec,
    store: DatasetStore,
    detectors: dict[str, DetectorAdapter],
    eot_seed: int = 0,
    eot_config: EotConfig | None = None,
    hot: HotParams = HotParams(),
    iou_min: float = DEFAULT_IOU_MIN,
    score_min: float = DEFAULT_SCORE_MIN,
    keep_going: bool = False,
    workers: int = 1,
    config_hash: str = "",
    patch_ref: str = "",
) -> EvalReport:
    """Count matched persons on clean vs patched frames and compute per-modality ASR.

    The patch is applied to every annotated person (visible: shape + EOT-
    transformed texture; infrared: shape as a hot region). One EOT sample
    per person is drawn from eot_seed in frame order, so results do not
    depend on worker count.
    """
    modalities = store.modalities()
    for modality in modalities:
        if modality not in detectors:
            raise ValueError(f"dataset contains {modality} frames but no {modality} adapter")

    eot_config = eot_config or EotConfig()
    rng = np.random.default_rng(eot_seed)
    frame_transforms = [
        [sample_eot(rng, eot_config) for _ in frame.persons] for frame in store.frames
    ]

    def eval_frame(index: int) -> list[dict]:
        frame = store.frames[index]
        rows = []
        for modality in modalities:
            plane = frame.plane(modality)
            if plane is None:
                continue
            adapter = detectors[modality]
            row = {
                "frame_id": frame.id,
                "modality": modality,
                "persons": len(frame.persons),
                "matched_clean": 0,
                "matched_patched": 0,
                "status": "ok",
            }
            try:
                clean = adapter.detect_frame(plane, list(frame.persons))
                patched_plane = _render_patched(
                    frame, modality, patch, frame_transforms[index], hot
                )
                patched = adapter.detect_frame(patched_plane, list(frame.persons))
                row["matched_clean"] = sum(
                    match_persons(frame.persons, clean, iou_min, score_min)
                )
                row["matched_patched"] = sum(
                    match_persons(frame.persons, patched, iou_min, score_min)
                )
            except AdapterError as exc:
                if not keep_going:
                    raise
                row["status"] = f"failed: {exc}"
            rows.append(row)
        return rows

    indices = range(store.n_frames)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_frame = list(pool.map(eval_frame, indices))
    else:
        per_frame = [eval_frame(i) for i in indices]

    # Reduce in frame order so parallelism never changes the report.
    all_rows: list[dict] = []
    counts = {m: {"n_clean": 0, "n_patch": 0} for m in modalities}
    for rows in per_frame:
        for row in rows:
            all_rows.append(row)
            if row["status"] == "ok":
                counts[row["modality"]]["n_clean"] += row["matched_clean"]
                counts[row["modality"]]["n_patch"] += row["matched_patched"]

    summary = {}
    for modality in modalities:
        n_clean = counts[modality]["n_clean"]
        n_patch = counts[modality]["n_patch"]
        if n_clean == 0:
            raise ValueError(
                f"no clean {modality} detections matched any person; ASR is undefined"
            )
        summary[modality] = {
            "detector": detectors[modality].name,
            "n_clean": n_clean,
            "n_patch": n_patch,
            "asr": asr(n_clean, n_patch),
        }

    return EvalReport(
        modalities=summary,
        rows=all_rows,
        config_hash=config_hash,
        patch_ref=patch_ref,
    )


def canonical_json(data) -> str:
    """Key-sorted, platform-independent JSON text."""
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def emit_report(report: EvalReport, out_dir, formats=("json", "csv", "png")) -> list[str]:
    """Write report.json (canonical), report.csv (per-frame rows), asr_bars.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(canonical_json(report.to_dict()), encoding="utf-8")
        written.append(str(path))

    if "csv" in formats:
        path = out_dir / "report.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=[
                    "frame_id",
                    "modality",
                    "persons",
                    "matched_clean",
                    "matched_patched",
                    "status",
                ],
            )
            writer.writeheader()
            for row in report.rows:
                writer.writerow(row)
        written.append(str(path))

    if "png" in formats:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        path = out_dir / "asr_bars.png"
        labels = []
        values = []
        for modality, entry in sorted(report.modalities.items()):
            labels.append(f"{entry['detector']}\n({modality})")
            values.append(entry["asr"])
        fig, ax = plt.subplots(figsize=(1.8 + 1.4 * max(1, len(labels)), 4.0))
        ax.bar(labels, values, color=["#c44" if v < 0 else "#468" for v in values])
        ax.set_ylabel("attack success rate")
        ax.set_ylim(min(0.0, *values) - 0.05 if values else 0.0, 1.05)
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_title("ASR per detector/modality")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        written.append(str(path))

    return written


def load_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))
