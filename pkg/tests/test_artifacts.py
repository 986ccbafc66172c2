import csv
import json

import numpy as np

from src.models.zsl.artifact_storage import ArtifactStorage, stage_key
from src.models.zsl.expansion import LossTrace, init_expansion_model
from src.models.zsl.output_generator import OutputGenerator, file_sha256
from src.models.zsl.parameter_controls import load_config
from src.models.zsl.recognition import EvaluationReport


def _report():
    return EvaluationReport(
        class_ids=("u0", "u1"),
        hit_at_k=np.array([0.5, 1.0]),
        confusion=np.array([[1, 1], [0, 2]]),
        per_class_accuracy=np.array([0.5, 1.0]),
        mode="P+E",
    )


def _read(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestStageKey:
    def test_stable_and_order_independent(self):
        assert stage_key("expand", {"a": 1, "b": [1, 2]}) == stage_key("expand", {"b": [1, 2], "a": 1})

    def test_stage_name_matters(self):
        assert stage_key("expand", {}) != stage_key("project", {})


class TestArtifactStorage:
    def test_save_and_load(self, tmp_path):
        storage = ArtifactStorage(str(tmp_path / "cache"))
        model = init_expansion_model(6, 2, "vae", (4,), seed=1)
        trace = LossTrace()
        trace.append(1, 0.5, 0.25, 0.125, 3.0)
        key = stage_key("expand", {"seed": 1})
        assert storage.save_expansion(key, model, trace, {"seed": 1})["success"]

        loaded = storage.load_expansion(key)
        assert loaded["success"]
        assert loaded["model"].variant == "vae"
        assert loaded["trace"].rows() == trace.rows()
        for a, b in zip(model.encoder.blocks(), loaded["model"].encoder.blocks()):
            np.testing.assert_array_equal(a, b)

    def test_miss(self, tmp_path):
        assert not ArtifactStorage(str(tmp_path)).load_expansion("nope")["success"]

    def test_list_and_delete(self, tmp_path):
        storage = ArtifactStorage(str(tmp_path))
        model = init_expansion_model(4, 1, "ae", (3,), seed=0)
        storage.save_expansion("k1", model, LossTrace())
        storage.save_expansion("k2", model, LossTrace())
        assert [e["id"] for e in storage.get_all_entries()["entries"]] == ["k1", "k2"]
        assert storage.delete_entry("k1")["success"]
        assert not (tmp_path / "k1").exists()
        assert [e["id"] for e in storage.get_all_entries()["entries"]] == ["k2"]
        assert not storage.delete_entry("k1")["success"]


class TestOutputGenerator:
    def test_evaluation_files(self, tmp_path):
        outputs = OutputGenerator(str(tmp_path))
        result = outputs.generate_evaluation_outputs(_report(), "pe")
        assert result["success"]
        assert _read(tmp_path / "report_pe.csv") == [["k", "hit_at_k"], ["1", "0.5"], ["2", "1"]]
        assert _read(tmp_path / "confusion_pe.csv")[1] == ["u0", "1", "1"]
        assert _read(tmp_path / "per_class_pe.csv")[2] == ["u1", "1", "2"]

    def test_floats_are_lossless(self, tmp_path):
        outputs = OutputGenerator(str(tmp_path))
        value = 0.1 + 0.2
        outputs.generate_rows_csv("x.csv", ("v",), [(value,)])
        assert float(_read(tmp_path / "x.csv")[1][0]) == value

    def test_summary_uses_sample_std(self, tmp_path):
        outputs = OutputGenerator(str(tmp_path))
        outputs.generate_summary_csv({"hit_at_1": [0.2, 0.4]})
        metric, mean, std, n = _read(tmp_path / "summary.csv")[1]
        assert metric == "hit_at_1"
        assert float(mean) == np.mean([0.2, 0.4])
        assert float(std) == np.std([0.2, 0.4], ddof=1)
        assert n == "2"

    def test_manifest_hashes_artifacts(self, tmp_path):
        outputs = OutputGenerator(str(tmp_path))
        outputs.generate_report_csv(_report())
        config = load_config(overrides={"output_dir": str(tmp_path)})
        stages = [{"name": "data", "status": "ok", "seconds": 0.0}]
        assert outputs.generate_manifest("run", config, (7,), stages)["success"]
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["config_hash"] == config.config_hash()
        entry = manifest["artifacts"]["report"]
        assert entry == {"path": "report.csv", "sha256": file_sha256(tmp_path / "report.csv"), "partial": False}

    def test_failed_manifest_marks_partial(self, tmp_path):
        outputs = OutputGenerator(str(tmp_path))
        outputs.generate_report_csv(_report())
        config = load_config(overrides={"output_dir": str(tmp_path)})
        outputs.generate_manifest("run", config, (7,), [], status="failed", failed_stage="project[P+E]")
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["failed_stage"] == "project[P+E]"
        assert manifest["artifacts"]["report"]["partial"] is True
