from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from sceneforge.config import data_path

FIXTURE = data_path("fixtures", "scenes50.jsonl")


def forge(*args: str, store: Path | None = None, check: bool = True) -> subprocess.CompletedProcess:
    cmd = [sys.executable, "-m", "sceneforge.cli"]
    if store is not None:
        cmd += ["--store", str(store)]
    cmd += list(args)
    result = subprocess.run(cmd, capture_output=True, text=True)
    if check and result.returncode != 0:
        raise AssertionError(f"forge {' '.join(args)} failed:\n{result.stderr}")
    return result


def write_mock_configs(cfg_dir: Path) -> dict[str, Path]:
    cfg_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, payload in {
        "model_base": {"kind": "mock", "model_name": "mock-base", "mode": "perfect"},
        "model_post": {"kind": "mock", "model_name": "mock-post", "mode": "degraded"},
        "judge": {"kind": "offline-judge", "judge_name": "overlap-judge"},
    }.items():
        path = cfg_dir / f"{name}.json"
        path.write_text(json.dumps(payload))
        paths[name] = path
    return paths


@pytest.fixture(scope="module")
def pipeline_store(tmp_path_factory) -> Path:
    store = tmp_path_factory.mktemp("cli-store")
    cfgs = write_mock_configs(store / "cfg")
    forge("ingest", "--adapter", "generic-jsonl", "--input", str(FIXTURE), store=store)
    forge("extract", "--extractor", "offline", store=store)
    forge("score", store=store)
    forge("mine", "--percentile", "20", store=store)
    forge("review-auto", store=store)
    forge("export-test", "--size", "8", store=store)
    forge(
        "eval", "--model", str(cfgs["model_base"]), "--judges", str(cfgs["judge"]),
        "--tasks", "sd,tqa,nop", "--run-id", "base", store=store,
    )
    forge(
        "eval", "--model", str(cfgs["model_post"]), "--judges", str(cfgs["judge"]),
        "--tasks", "sd,tqa,nop", "--run-id", "post", store=store,
    )
    forge("report", "--runs", "post", "--base-run", "base", store=store)
    return store


class TestPipelineOutputs:
    def test_ingest_stored_fifty_scenes(self, pipeline_store):
        lines = (pipeline_store / "scenes.jsonl").read_text().strip().splitlines()
        assert len(lines) == 50

    def test_scores_file_has_audit_columns(self, pipeline_store):
        header = (pipeline_store / "scores.csv").read_text().splitlines()[0]
        assert header == "scene_id,raw_sum,n_obj,norm_factor,score"

    def test_mine_selected_ceiling_of_percentile(self, pipeline_store):
        selection = json.loads((pipeline_store / "selection.json").read_text())
        assert len(selection["selected"]) == 10  # ceil(20% of 50)

    def test_test_set_has_requested_size(self, pipeline_store):
        test_set = json.loads((pipeline_store / "test_set.json").read_text())
        assert len(test_set["scenes"]) == 8

    def test_report_contains_krr(self, pipeline_store):
        report = (pipeline_store / "reports" / "report.txt").read_text()
        assert "mock-post" in report
        assert "%" in report
        data = json.loads((pipeline_store / "reports" / "report.json").read_text())
        post_row = next(r for r in data["rows"] if r["method"] == "mock-post")
        assert post_row["krr"].endswith("%")

    def test_splits_updated(self, pipeline_store):
        splits = {}
        for line in (pipeline_store / "scenes.jsonl").read_text().splitlines():
            record = json.loads(line)
            splits[record["scene_id"]] = record["split"]
        assert sum(1 for s in splits.values() if s == "test") == 8
        assert sum(1 for s in splits.values() if s == "candidate") == 2
        assert sum(1 for s in splits.values() if s == "train") == 40

    def test_export_train_excludes_test_scenes(self, pipeline_store, tmp_path):
        out = tmp_path / "train.jsonl"
        result = forge("export-train", "--out", str(out), store=pipeline_store)
        payload = json.loads(result.stdout)
        assert payload["scene_count"] == 40


class TestExitCodes:
    def test_percentile_zero_is_usage_error(self, tmp_path):
        result = forge("mine", "--percentile", "0", store=tmp_path, check=False)
        assert result.returncode == 2

    def test_unknown_subcommand_is_usage_error(self, tmp_path):
        result = forge("frobnicate", store=tmp_path, check=False)
        assert result.returncode == 2

    def test_runtime_error_is_exit_one_with_parsable_line(self, tmp_path):
        result = forge("score", store=tmp_path, check=False)
        assert result.returncode == 1
        assert result.stderr.startswith("forge: error:")

    def test_happy_path_exit_zero(self, tmp_path):
        result = forge(
            "ingest", "--adapter", "generic-jsonl", "--input", str(FIXTURE), store=tmp_path
        )
        assert result.returncode == 0

    def test_missing_store_reported(self):
        result = forge("score", check=False)
        assert result.returncode == 1
        assert "store" in result.stderr


class TestRerunnability:
    def test_reingest_is_noop(self, tmp_path):
        forge("ingest", "--adapter", "generic-jsonl", "--input", str(FIXTURE), store=tmp_path)
        second = forge(
            "ingest", "--adapter", "generic-jsonl", "--input", str(FIXTURE), store=tmp_path
        )
        payload = json.loads(second.stdout)
        assert payload["new_records"] == 0
        assert payload["duplicates"] == 50
        assert payload["record_count"] == 50

    def test_rescore_is_identical(self, tmp_path):
        forge("ingest", "--adapter", "generic-jsonl", "--input", str(FIXTURE), store=tmp_path)
        forge("extract", store=tmp_path)
        forge("score", store=tmp_path)
        first = (tmp_path / "scores.csv").read_bytes()
        forge("score", store=tmp_path)
        assert (tmp_path / "scores.csv").read_bytes() == first


class TestConfigPrecedence:
    def test_env_var_sets_store(self, tmp_path):
        import os

        env = dict(os.environ, FORGE_STORE=str(tmp_path))
        result = subprocess.run(
            [sys.executable, "-m", "sceneforge.cli", "ingest",
             "--adapter", "generic-jsonl", "--input", str(FIXTURE)],
            capture_output=True, text=True, env=env,
        )
        assert result.returncode == 0, result.stderr
        assert (tmp_path / "scenes.jsonl").exists()

    def test_flag_beats_config_file(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"percentile": 50.0, "store_root": str(tmp_path / "s")}))
        forge("--config", str(config), "ingest", "--adapter", "generic-jsonl",
              "--input", str(FIXTURE), store=tmp_path / "s")
        forge("--config", str(config), "extract", store=tmp_path / "s")
        forge("--config", str(config), "score", store=tmp_path / "s")
        forge("--config", str(config), "mine", "--percentile", "10", store=tmp_path / "s")
        selection = json.loads((tmp_path / "s" / "selection.json").read_text())
        assert selection["percentile"] == 10.0
        assert len(selection["selected"]) == 5
