"""CLI: subcommands, exit codes, strict config, pipeline resumability."""

import json

import pytest

from dualpatch.cli import main
from dualpatch.harness import load_dataset


def write_config(path, manifest, **overrides):
    config = {
        "seed": 17,
        "dataset": {"manifest": str(manifest)},
        "detectors": {
            "visible": {"type": "smooth_color"},
            "infrared": {"type": "coverage_mock"},
        },
        "shape_search": {"generations": 2, "population": 4, "top_k": 2},
        "texture_opt": {"steps": 4, "eot_samples": 2, "texture_size": [16, 16]},
    }
    config.update(overrides)
    path.write_text(json.dumps(config))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-fixtures", "--out", str(data), "--frames", "4", "--seed", "2"]) == 0
    return root


class TestBasics:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "dualpatch" in capsys.readouterr().out

    def test_unknown_subcommand_exits_two(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_config_exits_two(self, workspace):
        assert main(["shape-search", "--config", str(workspace / "absent.json")]) == 2

    def test_unknown_config_key_named(self, workspace, capsys, tmp_path):
        config = write_config(tmp_path / "c.json", workspace / "data/manifest.jsonl")
        payload = json.loads(config.read_text())
        payload["texture_opt"]["learning_rte"] = 0.1
        config.write_text(json.dumps(payload))
        assert main(["texture-opt", "--config", str(config)]) == 2
        assert "learning_rte" in capsys.readouterr().err

    def test_gen_fixtures_manifest_loads(self, workspace):
        store = load_dataset(workspace / "data/manifest.jsonl")
        assert store.n_frames == 4
        assert store.modalities() == ["visible", "infrared"]


@pytest.fixture(scope="module")
def run(workspace):
    out = workspace / "out"
    config = write_config(
        workspace / "run.json",
        workspace / "data/manifest.jsonl",
        output={"dir": str(out)},
    )
    code = main(["pipeline", "--config", str(config), "--workers", "1"])
    return config, out, code


class TestPipeline:

    def test_pipeline_succeeds(self, run):
        _, out, code = run
        assert code == 0
        for rel in (
            "config.resolved.json",
            "shapes/archive.json",
            "patches/patch_000/shape.json",
            "patches/patch_000/texture.png",
            "patches/patch_000/meta.json",
            "eval/report.json",
            "eval/report.csv",
            "eval/asr_bars.png",
        ):
            assert (out / rel).exists(), rel

    def test_config_hash_stamped_everywhere(self, run):
        _, out, _ = run
        resolved = json.loads((out / "config.resolved.json").read_text())
        digest = resolved["config_hash"]
        archive = json.loads((out / "shapes/archive.json").read_text())
        meta = json.loads((out / "patches/patch_000/meta.json").read_text())
        report = json.loads((out / "eval/report.json").read_text())
        assert archive["config_hash"] == digest
        assert meta["config_hash"] == digest
        assert report["config_hash"] == digest

    def test_rerun_skips_stages_and_keeps_bytes(self, run, capsys):
        config, out, _ = run
        before = {
            rel: (out / rel).read_bytes()
            for rel in (
                "shapes/archive.json",
                "patches/patch_000/texture.png",
                "eval/report.json",
            )
        }
        assert main(["pipeline", "--config", str(config), "--workers", "1"]) == 0
        stdout = capsys.readouterr().out
        assert "up to date" in stdout
        for rel, content in before.items():
            assert (out / rel).read_bytes() == content

    def test_eval_rejects_foreign_patch(self, run, workspace, capsys):
        config, out, _ = run
        # Same dataset, different seed: a different config hash.
        other = write_config(
            workspace / "other.json",
            workspace / "data/manifest.jsonl",
            seed=99,
            output={"dir": str(workspace / "other-out")},
        )
        code = main([
            "eval", "--config", str(other),
            "--patch", str(out / "patches/patch_000"),
        ])
        assert code == 2
        assert "config hash" in capsys.readouterr().err

    def test_seed_override_changes_hash(self, run, workspace):
        config, out, _ = run
        resolved = json.loads((out / "config.resolved.json").read_text())
        out2 = workspace / "seed-override"
        code = main([
            "shape-search", "--config", str(config),
            "--seed", "4242", "--out", str(out2), "--workers", "1",
        ])
        assert code == 0
        resolved2 = json.loads((out2 / "config.resolved.json").read_text())
        assert resolved2["config_hash"] != resolved["config_hash"]

    def test_report_requires_eval(self, workspace, tmp_path):
        config = write_config(tmp_path / "r.json", workspace / "data/manifest.jsonl")
        code = main(["report", "--config", str(config), "--out", str(tmp_path / "empty")])
        assert code == 2
