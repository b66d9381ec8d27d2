"""Run configuration: strict JSON parsing, defaults, and content hashing.

A run is a single JSON document; unknown keys are rejected so typos fail
fast. All stage seeds derive from the one global seed, and the config hash
(over the resolved document) stamps every output directory so artifacts
from different configurations cannot be mixed silently.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .render import EotConfig, HotParams
from .shape_search import SearchConfig
from .texture_opt import TextureOptConfig


class ConfigError(ValueError):
    """The run configuration is malformed."""


def hash_payload(payload) -> str:
    """Content digest of a JSON-serializable payload, key-order independent."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def derive_seed(seed: int, label: str) -> int:
    """Deterministic per-stage seed from the global seed."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


_TOP_KEYS = {
    "seed", "dataset", "detectors", "shape_search", "texture_opt",
    "eot", "eval", "infrared_patch", "output",
}
_DATASET_KEYS = {"manifest"}
_SHAPE_KEYS = {
    "generations", "population", "top_k", "diversity_iou", "sigma_radius",
    "sigma_angle", "k_min", "k_max", "area_fraction",
}
_TEXTURE_KEYS = {
    "steps", "learning_rate", "lambda_tv", "eot_samples", "texture_size",
    "init", "margin", "backtrack_max", "per_shape",
}
_EOT_KEYS = {"rotation_deg", "scale", "brightness", "blur_sigma"}
_EVAL_KEYS = {"iou_min", "score_min", "patch_index"}
_HOT_KEYS = {"mode", "v_hot", "delta"}
_OUTPUT_KEYS = {"dir"}


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def _interval(section: str, value, name: str) -> tuple[float, float]:
    if (not isinstance(value, (list, tuple)) or len(value) != 2):
        raise ConfigError(f"{section}.{name} must be a [min, max] pair")
    return float(value[0]), float(value[1])


@dataclass
class RunConfig:
    seed: int
    manifest: Path
    detector_configs: dict
    search: SearchConfig
    texture: TextureOptConfig
    per_shape: bool
    eot: EotConfig
    hot: HotParams
    iou_min: float
    score_min: float
    patch_index: int
    output_dir: Path | None
    resolved: dict = field(repr=False)
    config_hash: str = ""

    @property
    def eval_eot_seed(self) -> int:
        return derive_seed(self.seed, "eval")

    def texture_seed(self, shape_index: int) -> int:
        return derive_seed(self.seed, f"texture-opt:{shape_index}")


def parse_run_config(data: dict, base_dir: Path | None = None,
                     seed_override: int | None = None) -> RunConfig:
    """Validate the config document, fill defaults, and compute its hash."""
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    _check_keys("config", data, _TOP_KEYS)

    if "dataset" not in data or "detectors" not in data:
        raise ConfigError("config requires 'dataset' and 'detectors' sections")

    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    if seed_override is not None:
        seed = seed_override

    _check_keys("dataset", data["dataset"], _DATASET_KEYS)
    if "manifest" not in data["dataset"]:
        raise ConfigError("dataset.manifest is required")
    manifest = base_dir / data["dataset"]["manifest"]

    detectors = data["detectors"]
    if not isinstance(detectors, dict) or not detectors:
        raise ConfigError("detectors must map modalities to adapter configs")
    unknown_modalities = sorted(set(detectors) - {"visible", "infrared"})
    if unknown_modalities:
        raise ConfigError(f"unknown modality in detectors: {', '.join(unknown_modalities)}")
    from .detect import build_detector

    for modality, det_cfg in detectors.items():
        try:
            adapter = build_detector(det_cfg)
        except ValueError as exc:
            raise ConfigError(f"detectors.{modality}: {exc}") from exc
        if det_cfg.get("type") != "subprocess" and adapter.modality != modality:
            raise ConfigError(
                f"detectors.{modality}: adapter type {det_cfg['type']!r} serves "
                f"{adapter.modality} frames"
            )
        if det_cfg.get("type") == "subprocess" and det_cfg.get("modality") != modality:
            raise ConfigError(
                f"detectors.{modality}: subprocess adapter declares modality "
                f"{det_cfg.get('modality')!r}"
            )
        adapter.close()

    shape_section = dict(data.get("shape_search", {}))
    _check_keys("shape_search", shape_section, _SHAPE_KEYS)
    texture_section = dict(data.get("texture_opt", {}))
    _check_keys("texture_opt", texture_section, _TEXTURE_KEYS)
    per_shape = bool(texture_section.pop("per_shape", True))

    eot_section = dict(data.get("eot", {}))
    _check_keys("eot", eot_section, _EOT_KEYS)
    eval_section = dict(data.get("eval", {}))
    _check_keys("eval", eval_section, _EVAL_KEYS)
    hot_section = dict(data.get("infrared_patch", {}))
    _check_keys("infrared_patch", hot_section, _HOT_KEYS)
    output_section = dict(data.get("output", {}))
    _check_keys("output", output_section, _OUTPUT_KEYS)

    iou_min = float(eval_section.get("iou_min", 0.5))
    score_min = float(eval_section.get("score_min", 0.5))
    patch_index = int(eval_section.get("patch_index", 0))
    if patch_index < 0:
        raise ConfigError("eval.patch_index must be >= 0")

    try:
        search = SearchConfig(
            seed=derive_seed(seed, "shape-search"),
            iou_min=iou_min,
            score_min=score_min,
            **shape_section,
        )
        if "texture_size" in texture_section:
            texture_section["texture_size"] = tuple(texture_section["texture_size"])
        texture = TextureOptConfig(seed=0, **texture_section)  # per-shape seed set later
        eot_kwargs = {}
        if "rotation_deg" in eot_section:
            lo, hi = _interval("eot", eot_section["rotation_deg"], "rotation_deg")
            eot_kwargs["rotation"] = (math.radians(lo), math.radians(hi))
        for key in ("scale", "brightness", "blur_sigma"):
            if key in eot_section:
                eot_kwargs[key] = _interval("eot", eot_section[key], key)
        eot = EotConfig(**eot_kwargs)
        hot = HotParams(**hot_section)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    output_dir = output_section.get("dir")

    resolved = {
        "seed": seed,
        "dataset": {"manifest": str(data["dataset"]["manifest"])},
        "detectors": detectors,
        "shape_search": {
            "generations": search.generations,
            "population": search.population,
            "top_k": search.top_k,
            "diversity_iou": search.diversity_iou,
            "sigma_radius": search.sigma_radius,
            "sigma_angle": search.sigma_angle,
            "k_min": search.k_min,
            "k_max": search.k_max,
            "area_fraction": search.area_fraction,
        },
        "texture_opt": {
            "steps": texture.steps,
            "learning_rate": texture.learning_rate,
            "lambda_tv": texture.lambda_tv,
            "eot_samples": texture.eot_samples,
            "texture_size": list(texture.texture_size),
            "init": texture.init,
            "margin": texture.margin,
            "backtrack_max": texture.backtrack_max,
            "per_shape": per_shape,
        },
        "eot": {
            "rotation": list(eot.rotation),
            "scale": list(eot.scale),
            "brightness": list(eot.brightness),
            "blur_sigma": list(eot.blur_sigma),
        },
        "eval": {"iou_min": iou_min, "score_min": score_min, "patch_index": patch_index},
        "infrared_patch": {"mode": hot.mode, "v_hot": hot.v_hot, "delta": hot.delta},
    }
    digest = hash_payload(resolved)

    return RunConfig(
        seed=seed,
        manifest=manifest,
        detector_configs=detectors,
        search=search,
        texture=texture,
        per_shape=per_shape,
        eot=eot,
        hot=hot,
        iou_min=iou_min,
        score_min=score_min,
        patch_index=patch_index,
        output_dir=Path(output_dir) if output_dir else None,
        resolved=resolved,
        config_hash=digest,
    )


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_run_config(data, base_dir=path.parent, seed_override=seed_override)
