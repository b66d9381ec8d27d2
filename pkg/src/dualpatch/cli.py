"""Command-line entry point.

Subcommands: gen-fixtures, shape-search, texture-opt, eval, report, and
pipeline (all stages). Exit codes: 0 success, 2 configuration error,
3 runtime failure. Completed pipeline stages are skipped on rerun when
their outputs carry the current config hash.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_run_config
from .detect import AdapterError, build_detector
from .fixtures import generate_fixtures
from .harness import (
    ManifestError,
    canonical_json,
    emit_report,
    evaluate_patch,
    load_dataset,
    load_report,
)
from .render import INFRARED, VISIBLE
from .shape_search import load_archive, save_archive, search
from .texture_opt import (
    load_patch_artifact,
    optimize_texture,
    write_patch_artifact,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualpatch",
        description="Dual-modal adversarial patch optimization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-fixtures", help="emit a synthetic dual-modal dataset")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--frames", type=int, default=50)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--size", default="320x240", help="image size WxH")
    gen.add_argument("--max-persons", type=int, default=3)

    def add_run_args(p, keep_going=False):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--workers", type=int, default=None,
                       help="worker threads (default: logical processors)")
        if keep_going:
            p.add_argument("--keep-going", action="store_true",
                           help="mark failed frames instead of aborting")

    add_run_args(sub.add_parser("shape-search", help="evolve patch shapes (infrared)"))
    add_run_args(sub.add_parser("texture-opt", help="optimize patch textures (visible)"))
    evalp = sub.add_parser("eval", help="evaluate a patch artifact over the dataset")
    add_run_args(evalp, keep_going=True)
    evalp.add_argument("--patch", default=None, help="patch artifact directory")
    rep = sub.add_parser("report", help="emit CSV/plot from an existing report.json")
    add_run_args(rep)
    add_run_args(sub.add_parser("pipeline", help="run all stages"), keep_going=True)

    return parser


def _resolve_out(cfg: RunConfig, args) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output_dir is not None:
        return cfg.output_dir
    return Path("runs") / f"run-{cfg.config_hash[:12]}"


def _workers(args) -> int:
    if getattr(args, "workers", None):
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return args.workers
    import os

    return os.cpu_count() or 1


def _write_resolved(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    payload = dict(cfg.resolved)
    payload["config_hash"] = cfg.config_hash
    (out / "config.resolved.json").write_text(canonical_json(payload), encoding="utf-8")


def _archive_fresh(path: Path, cfg: RunConfig) -> bool:
    if not path.exists():
        return False
    try:
        _, payload = load_archive(path)
    except (OSError, json.JSONDecodeError, KeyError, ValueError):
        return False
    return payload.get("config_hash") == cfg.config_hash


def stage_shape_search(cfg: RunConfig, out: Path, workers: int) -> Path:
    archive_path = out / "shapes" / "archive.json"
    if _archive_fresh(archive_path, cfg):
        print(f"[shape-search] up to date: {archive_path}")
        return archive_path
    if INFRARED not in cfg.detector_configs:
        raise ConfigError("shape-search requires an infrared detector")
    store = load_dataset(cfg.manifest)
    detector = build_detector(cfg.detector_configs[INFRARED])
    search_config = dataclasses.replace(cfg.search, workers=workers)
    try:
        result = search(
            store,
            detector,
            search_config,
            hot=cfg.hot,
            checkpoint_dir=out / "shapes" / "checkpoints",
        )
    finally:
        detector.close()
    archive_path.parent.mkdir(parents=True, exist_ok=True)
    save_archive(result, archive_path, config_hash=cfg.config_hash)
    best = result.archive[0] if result.archive else None
    if best is not None:
        print(f"[shape-search] best ASR {best.asr:.3f} over "
              f"{result.evaluations} evaluations -> {archive_path}")
    return archive_path


def _patch_dir(out: Path, index: int) -> Path:
    return out / "patches" / f"patch_{index:03d}"


def _patch_fresh(path: Path, cfg: RunConfig) -> bool:
    meta_path = path / "meta.json"
    if not meta_path.exists():
        return False
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return meta.get("config_hash") == cfg.config_hash


def stage_texture_opt(cfg: RunConfig, out: Path, workers: int) -> list[Path]:
    del workers  # the optimization loop is sequential by contract
    archive_path = out / "shapes" / "archive.json"
    if not archive_path.exists():
        raise ConfigError(f"no shape archive at {archive_path}; run shape-search first")
    candidates, payload = load_archive(archive_path)
    if payload.get("config_hash") != cfg.config_hash:
        raise ConfigError(
            f"shape archive {archive_path} was produced with config hash "
            f"{payload.get('config_hash')!r}, current is {cfg.config_hash!r}"
        )
    if not candidates:
        raise RuntimeError("shape archive is empty")
    selected = candidates if cfg.per_shape else candidates[:1]
    if all(_patch_fresh(_patch_dir(out, i), cfg) for i in range(len(selected))):
        print(f"[texture-opt] up to date: {len(selected)} patch artifact(s)")
        return [_patch_dir(out, i) for i in range(len(selected))]
    if VISIBLE not in cfg.detector_configs:
        raise ConfigError("texture-opt requires a visible detector")
    store = load_dataset(cfg.manifest)
    detector = build_detector(cfg.detector_configs[VISIBLE])
    paths = []
    try:
        for i, candidate in enumerate(selected):
            texture_config = dataclasses.replace(cfg.texture, seed=cfg.texture_seed(i))
            texture, reports = optimize_texture(
                candidate.shape,
                store,
                detector,
                texture_config,
                area_fraction=cfg.search.area_fraction,
                eot_config=cfg.eot,
            )
            final = reports[-1]
            meta = {
                "config_hash": cfg.config_hash,
                "seed": texture_config.seed,
                "shape_lineage_id": candidate.lineage_id,
                "shape_asr_infrared": candidate.asr,
                "texture_opt": {
                    "steps": texture_config.steps,
                    "learning_rate": texture_config.learning_rate,
                    "lambda_tv": texture_config.lambda_tv,
                    "eot_samples": texture_config.eot_samples,
                },
                "loss_history": [r.to_dict() for r in reports],
                "final_metrics": {
                    "l_ap": final.l_ap,
                    "l_tv": final.l_tv,
                    "total": final.total,
                    "mean_confidence": final.mean_confidence,
                },
            }
            path = write_patch_artifact(
                _patch_dir(out, i), candidate.shape, texture,
                cfg.search.area_fraction, meta,
            )
            print(f"[texture-opt] patch {i}: final mean confidence "
                  f"{final.mean_confidence:.4f} -> {path}")
            paths.append(path)
    finally:
        detector.close()
    return paths


def stage_eval(cfg: RunConfig, out: Path, workers: int, keep_going: bool,
               patch_dir: Path | None = None) -> Path:
    if patch_dir is None:
        patch_dir = _patch_dir(out, cfg.patch_index)
    # Reference the artifact relative to the run directory so reports stay
    # byte-identical across differently named output roots.
    try:
        patch_ref = str(patch_dir.resolve().relative_to(out.resolve()))
    except ValueError:
        patch_ref = str(patch_dir)
    patch, meta = load_patch_artifact(patch_dir)
    artifact_hash = meta.get("config_hash")
    if artifact_hash != cfg.config_hash:
        raise ConfigError(
            f"patch artifact {patch_dir} carries config hash {artifact_hash!r}; "
            f"refusing to mix with current config {cfg.config_hash!r}"
        )
    store = load_dataset(cfg.manifest)
    detectors = {}
    try:
        for modality in store.modalities():
            if modality not in cfg.detector_configs:
                raise ConfigError(f"dataset has {modality} frames but no {modality} detector")
            detectors[modality] = build_detector(cfg.detector_configs[modality])
        report = evaluate_patch(
            patch,
            store,
            detectors,
            eot_seed=cfg.eval_eot_seed,
            eot_config=cfg.eot,
            hot=cfg.hot,
            iou_min=cfg.iou_min,
            score_min=cfg.score_min,
            keep_going=keep_going,
            workers=workers,
            config_hash=cfg.config_hash,
            patch_ref=patch_ref,
        )
    finally:
        for adapter in detectors.values():
            adapter.close()
    eval_dir = out / "eval"
    emit_report(report, eval_dir, formats=("json",))
    for modality, entry in sorted(report.modalities.items()):
        print(f"[eval] {modality}: ASR {entry['asr']:.4f} "
              f"(clean {entry['n_clean']}, patched {entry['n_patch']})")
    return eval_dir / "report.json"


def stage_report(cfg: RunConfig, out: Path) -> list[str]:
    report_path = out / "eval" / "report.json"
    if not report_path.exists():
        raise ConfigError(f"no report at {report_path}; run eval first")
    report = load_report(report_path)
    written = emit_report(report, out / "eval", formats=("json", "csv", "png"))
    print(f"[report] wrote {', '.join(written)}")
    return written


def _cmd_gen_fixtures(args) -> int:
    try:
        width, height = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--size must look like 320x240, got {args.size!r}") from None
    manifest = generate_fixtures(
        args.out,
        n_frames=args.frames,
        seed=args.seed,
        image_size=(width, height),
        max_persons=args.max_persons,
    )
    print(f"[gen-fixtures] wrote {manifest}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed)
    out = _resolve_out(cfg, args)
    workers = _workers(args)
    _write_resolved(cfg, out)
    keep_going = getattr(args, "keep_going", False)

    if args.command == "shape-search":
        stage_shape_search(cfg, out, workers)
    elif args.command == "texture-opt":
        stage_texture_opt(cfg, out, workers)
    elif args.command == "eval":
        patch_dir = Path(args.patch) if args.patch else None
        stage_eval(cfg, out, workers, keep_going, patch_dir)
    elif args.command == "report":
        stage_report(cfg, out)
    else:  # pipeline
        stage_shape_search(cfg, out, workers)
        stage_texture_opt(cfg, out, workers)
        stage_eval(cfg, out, workers, keep_going)
        stage_report(cfg, out)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "gen-fixtures":
            return _cmd_gen_fixtures(args)
        return _cmd_run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, AdapterError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
