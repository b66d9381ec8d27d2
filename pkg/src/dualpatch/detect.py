"""Detector contract, built-in oracle detectors, and the subprocess adapter.

Two deterministic oracles stand in for real detectors: a coverage-driven
mock for the infrared side (shape search needs a score that reacts to
geometry alone) and a smooth color-statistic detector for the visible side
(texture optimization needs nonzero pixel gradients). Real models attach
through the newline-delimited JSON subprocess protocol.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import BitMask, Rect
from .render import INFRARED, VISIBLE, ImagePlane, save_image

PERSON_CLASS = 0


class AdapterError(RuntimeError):
    """A detector backend failed (crash, timeout, malformed response)."""


@dataclass(frozen=True)
class Detection:
    box: Rect
    score: float
    class_id: int = PERSON_CLASS

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("detection score must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "box": [self.box.x, self.box.y, self.box.w, self.box.h],
            "score": self.score,
            "class_id": self.class_id,
        }

    @staticmethod
    def from_dict(data: dict) -> "Detection":
        box = data["box"]
        return Detection(
            box=Rect(float(box[0]), float(box[1]), float(box[2]), float(box[3])),
            score=float(data["score"]),
            class_id=int(data["class_id"]),
        )


def box_pixel_window(box: Rect, width: int, height: int) -> tuple[int, int, int, int]:
    """Integer window (row0, row1, col0, col1) of pixel centers inside box,
    clipped to the raster."""
    col0 = max(0, math.ceil(box.x - 0.5))
    col1 = max(col0, min(width, math.ceil(box.x + box.w - 0.5)))
    row0 = max(0, math.ceil(box.y - 0.5))
    row1 = max(row0, min(height, math.ceil(box.y + box.h - 0.5)))
    return row0, row1, col0, col1


def mock_coverage_confidence(
    person_box: Rect, patch_mask: BitMask, c0: float = 0.9, rho: float = 0.25
) -> float:
    """Confidence that decays linearly with patch coverage of the box:
    c0 * max(0, 1 - coverage / rho)."""
    row0, row1, col0, col1 = box_pixel_window(person_box, patch_mask.width, patch_mask.height)
    box_pixels = (row1 - row0) * (col1 - col0)
    if box_pixels <= 0:
        raise ValueError("empty person box")
    covered = int(patch_mask.bits[row0:row1, col0:col1].sum())
    coverage = covered / box_pixels
    return c0 * max(0.0, 1.0 - coverage / rho)


def coverage_kill_threshold(c0: float = 0.9, rho: float = 0.25, score_cut: float = 0.5) -> float:
    """Closed-form coverage above which the mock score drops below score_cut."""
    return rho * (1.0 - score_cut / c0)


def smooth_color_confidence(
    frame_values: np.ndarray,
    person_box: Rect,
    c0: float = 0.9,
    lam: float = 8.0,
    mu: tuple[float, float, float] = (0.5, 0.5, 0.5),
) -> float:
    """c0 * exp(-lam * d), d = mean squared color distance from mu over the box."""
    score, _, _ = smooth_color_confidence_grad(frame_values, person_box, c0, lam, mu, want_grad=False)
    return score


def smooth_color_confidence_grad(
    frame_values: np.ndarray,
    person_box: Rect,
    c0: float = 0.9,
    lam: float = 8.0,
    mu: tuple[float, float, float] = (0.5, 0.5, 0.5),
    want_grad: bool = True,
):
    """Score plus its analytic gradient over the box pixel window.

    Returns (score, grad_window or None, (row0, row1, col0, col1)).
    """
    height, width = frame_values.shape[:2]
    row0, row1, col0, col1 = box_pixel_window(person_box, width, height)
    if (row1 - row0) * (col1 - col0) <= 0:
        raise ValueError("empty person box")
    window = frame_values[row0:row1, col0:col1, :]
    diff = window - np.asarray(mu, dtype=np.float64)
    n_box = window.shape[0] * window.shape[1]
    d = float(np.sum(diff * diff)) / n_box
    score = c0 * math.exp(-lam * d)
    grad = None
    if want_grad:
        grad = score * (-lam) * (2.0 / n_box) * diff
    return score, grad, (row0, row1, col0, col1)


class DetectorAdapter:
    """One detector backend: scores frames of a single modality."""

    name: str = "adapter"
    modality: str = VISIBLE
    differentiable: bool = False

    def detect_frame(self, plane: ImagePlane, persons: list[Rect] | None = None) -> list[Detection]:
        raise NotImplementedError

    def person_score_grads(self, plane: ImagePlane, persons: list[Rect]):
        """(score, grad_window, window) per person; differentiable adapters only."""
        raise AdapterError(f"adapter {self.name!r} does not expose gradients")

    def check_modality(self, plane: ImagePlane) -> None:
        if plane.modality != self.modality:
            raise ValueError(
                f"adapter {self.name!r} expects {self.modality} frames, got {plane.modality}"
            )

    def close(self) -> None:
        pass


class CoverageMockDetector(DetectorAdapter):
    """Infrared oracle: per-person confidence from hot-pixel coverage.

    A pixel counts as patch-activated when its intensity reaches
    hot_threshold; the confidence for each annotated person then follows
    mock_coverage_confidence. Deterministic and pure.
    """

    differentiable = False

    def __init__(self, c0: float = 0.9, rho: float = 0.25, hot_threshold: float = 0.75,
                 name: str = "coverage-mock"):
        if rho <= 0.0:
            raise ValueError("rho must be positive")
        self.c0 = c0
        self.rho = rho
        self.hot_threshold = hot_threshold
        self.name = name
        self.modality = INFRARED

    def detect_frame(self, plane: ImagePlane, persons: list[Rect] | None = None) -> list[Detection]:
        self.check_modality(plane)
        if persons is None:
            raise ValueError("built-in oracle detectors require annotated person boxes")
        bits = plane.values >= self.hot_threshold
        mask = BitMask(width=plane.width, height=plane.height, bits=bits)
        return [
            Detection(box, mock_coverage_confidence(box, mask, self.c0, self.rho))
            for box in persons
        ]


class SmoothColorDetector(DetectorAdapter):
    """Visible oracle: per-person confidence from mean color distance to mu,
    differentiable in the frame pixels."""

    differentiable = True

    def __init__(self, c0: float = 0.9, lam: float = 8.0,
                 mu: tuple[float, float, float] = (0.5, 0.5, 0.5),
                 name: str = "smooth-color"):
        self.c0 = c0
        self.lam = lam
        self.mu = tuple(float(m) for m in mu)
        self.name = name
        self.modality = VISIBLE

    def detect_frame(self, plane: ImagePlane, persons: list[Rect] | None = None) -> list[Detection]:
        self.check_modality(plane)
        if persons is None:
            raise ValueError("built-in oracle detectors require annotated person boxes")
        return [
            Detection(box, smooth_color_confidence(plane.values, box, self.c0, self.lam, self.mu))
            for box in persons
        ]

    def person_score_grads(self, plane: ImagePlane, persons: list[Rect]):
        self.check_modality(plane)
        return [
            smooth_color_confidence_grad(plane.values, box, self.c0, self.lam, self.mu)
            for box in persons
        ]


class _LineReader(threading.Thread):
    def __init__(self, stream):
        super().__init__(daemon=True)
        self._stream = stream
        self.lines: queue.Queue = queue.Queue()
        self.start()

    def run(self):
        try:
            for line in self._stream:
                self.lines.put(line)
        except ValueError:  # stream closed
            pass
        self.lines.put(None)


class SubprocessDetector(DetectorAdapter):
    """Adapter speaking newline-delimited JSON over stdin/stdout.

    Request:  {"id": str, "image_path": str, "modality": "visible"|"infrared"}
    Response: {"id": str, "detections": [{"box": [x,y,w,h], "score": f, "class_id": i}]}

    One instance serves one request at a time; each request has a timeout
    after which the adapter is considered failed.
    """

    differentiable = False

    def __init__(self, command: list[str], modality: str, timeout: float = 30.0,
                 name: str | None = None):
        if modality not in (VISIBLE, INFRARED):
            raise ValueError(f"unknown modality {modality!r}")
        self.command = list(command)
        self.modality = modality
        self.timeout = timeout
        self.name = name or f"subprocess:{Path(command[0]).name}"
        self._proc: subprocess.Popen | None = None
        self._reader: _LineReader | None = None
        self._next_id = 0
        self._lock = threading.Lock()

    def _ensure_started(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterError(f"adapter {self.name!r} failed to start: {exc}") from exc
        self._reader = _LineReader(self._proc.stdout)

    def _request(self, payload: dict) -> dict:
        self._ensure_started()
        assert self._proc is not None and self._reader is not None
        line = json.dumps(payload, sort_keys=True)
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterError(f"adapter {self.name!r} pipe closed: {exc}") from exc
        try:
            raw = self._reader.lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise AdapterError(
                f"adapter {self.name!r} timed out after {self.timeout}s on request {payload['id']}"
            ) from None
        if raw is None:
            raise AdapterError(f"adapter {self.name!r} exited before responding")
        try:
            response = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"adapter {self.name!r} sent malformed JSON: {exc}") from exc
        if response.get("id") != payload["id"]:
            raise AdapterError(
                f"adapter {self.name!r} response id {response.get('id')!r} "
                f"does not match request {payload['id']!r}"
            )
        return response

    def detect_path(self, image_path: str) -> list[Detection]:
        with self._lock:
            self._next_id += 1
            request_id = str(self._next_id)
            response = self._request(
                {"id": request_id, "image_path": str(image_path), "modality": self.modality}
            )
        try:
            return [Detection.from_dict(d) for d in response["detections"]]
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise AdapterError(f"adapter {self.name!r} sent a malformed response: {exc}") from exc

    def detect_frame(self, plane: ImagePlane, persons: list[Rect] | None = None) -> list[Detection]:
        self.check_modality(plane)
        with tempfile.TemporaryDirectory(prefix="dualpatch-adapter-") as tmp:
            path = Path(tmp) / "frame.png"
            save_image(plane, path)
            return self.detect_path(str(path))

    def close(self) -> None:
        if self._proc is not None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None
            self._reader = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def detect(
    adapter: DetectorAdapter,
    frames: list[ImagePlane],
    annotations: list[list[Rect]] | None = None,
) -> list[list[Detection]]:
    """Run the adapter over frames; one DetectionSet per frame.

    Built-in oracles score the provided annotations; subprocess adapters
    propose their own boxes and ignore them.
    """
    results = []
    for i, plane in enumerate(frames):
        adapter.check_modality(plane)
        persons = annotations[i] if annotations is not None else None
        results.append(adapter.detect_frame(plane, persons))
    return results


_DETECTOR_KEYS = {
    "coverage_mock": {"type", "c0", "rho", "hot_threshold", "name"},
    "smooth_color": {"type", "c0", "lambda", "mu", "name"},
    "subprocess": {"type", "command", "modality", "timeout", "name"},
}


def build_detector(config: dict) -> DetectorAdapter:
    """Construct an adapter from its config record (strict keys)."""
    if "type" not in config:
        raise ValueError("detector config requires a 'type' key")
    kind = config["type"]
    if kind not in _DETECTOR_KEYS:
        raise ValueError(f"unknown detector type {kind!r}")
    unknown = set(config) - _DETECTOR_KEYS[kind]
    if unknown:
        raise ValueError(f"unknown detector config key(s): {sorted(unknown)}")
    if kind == "coverage_mock":
        return CoverageMockDetector(
            c0=config.get("c0", 0.9),
            rho=config.get("rho", 0.25),
            hot_threshold=config.get("hot_threshold", 0.75),
            name=config.get("name", "coverage-mock"),
        )
    if kind == "smooth_color":
        return SmoothColorDetector(
            c0=config.get("c0", 0.9),
            lam=config.get("lambda", 8.0),
            mu=tuple(config.get("mu", (0.5, 0.5, 0.5))),
            name=config.get("name", "smooth-color"),
        )
    return SubprocessDetector(
        command=config["command"],
        modality=config["modality"],
        timeout=config.get("timeout", 30.0),
        name=config.get("name"),
    )
