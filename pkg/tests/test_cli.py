"""Command-line behaviour: exit codes, artifacts and command round trips."""

import json

import pytest
from click.testing import CliRunner

from ramp_transfer.cli import main

TINY_CONFIG = {
    "seed": 5,
    "synth": {"n_sections": 3, "weeks": 2, "regime": "piecewise",
              "noise_speed": 0.5, "noise_occupancy": 0.3,
              "noise_flow": 20.0, "domain_shift": 0.0},
    "ridge": {"runs": 2},
    "transfer": {"steps": 2, "folds": 2, "theta": 0.6, "n_estimators": 3,
                 "max_depth": 2, "substitute_comparator": "ge"},
    "evaluate": {"models": ["knn", "tra"],
                 "targets": ["After_up_mean_speed"]},
}


def _write_config(path, out_dir):
    config = dict(TINY_CONFIG)
    config["out"] = str(out_dir)
    path.write_text(json.dumps(config))
    return str(path)


@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory):
    """One tiny synth+pipeline run shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    config = _write_config(root / "config.json", out)
    runner = CliRunner()
    for command in ("synth", "pipeline"):
        result = runner.invoke(main, [command, "--config", config])
        assert result.exit_code == 0, result.output
    return config, out


class TestExitCodes:
    def test_successful_synth_exits_zero(self, tmp_path):
        config = _write_config(tmp_path / "c.json", tmp_path / "out")
        result = CliRunner().invoke(main, ["synth", "--config", config])
        assert result.exit_code == 0

    def test_missing_site_map_exits_one_and_names_path(self, tmp_path):
        out = tmp_path / "empty"
        config = _write_config(tmp_path / "c.json", out)
        result = CliRunner().invoke(main, ["ingest", "--config", config])
        assert result.exit_code == 1
        assert str(out / "sitemap.json") in result.output

    def test_missing_config_file_exits_one(self, tmp_path):
        result = CliRunner().invoke(
            main, ["synth", "--config", str(tmp_path / "absent.json")])
        assert result.exit_code == 1

    def test_invalid_config_json_exits_one(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        result = CliRunner().invoke(main, ["synth", "--config", str(bad)])
        assert result.exit_code == 1

    def test_unexpected_runtime_error_exits_two(self, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"out": str(tmp_path / "out"),
                                      "synth": {"regime": "cubic"}}))
        result = CliRunner().invoke(main, ["synth", "--config", str(config)])
        assert result.exit_code == 2


class TestPipelineArtifacts:
    EXPECTED = ("sitemap.json", "manifest.json", "loop_before.csv",
                "loop_after.csv", "probe_before.csv", "probe_after.csv",
                "samples_before.csv", "samples_after.csv",
                "corrected_before.csv", "corrected_after.csv",
                "features.csv", "coefficients.csv", "selection.json",
                "report.json", "report_mae.csv", "report_rmse.csv",
                "report_mape.csv", "plot_mae.csv", "plot_rmse.csv",
                "plot_mape.csv", "timings.json")

    def test_all_artifacts_written(self, pipeline_out):
        _, out = pipeline_out
        for name in self.EXPECTED:
            assert (out / name).exists(), name

    def test_csv_artifacts_carry_provenance_header(self, pipeline_out):
        _, out = pipeline_out
        first = (out / "features.csv").read_text().splitlines()[0]
        assert first.startswith("# config_hash=") and "seed=5" in first

    def test_report_entries_cover_both_models(self, pipeline_out):
        _, out = pipeline_out
        doc = json.loads((out / "report.json").read_text())
        models = {e["model"] for e in doc["entries"]}
        sections = {e["section"] for e in doc["entries"]}
        assert models == {"knn", "tra"}
        assert sections == {"S01", "S02", "S03"}


class TestTrainPredict:
    def test_train_then_predict(self, pipeline_out):
        config, out = pipeline_out
        runner = CliRunner()
        result = runner.invoke(main, [
            "train", "--config", config, "--target", "After_up_mean_speed",
            "--target-section", "S03", "--theta", "0.999"])
        assert result.exit_code == 0, result.output
        model_path = out / "model_After_up_mean_speed.json"
        assert model_path.exists()
        doc = json.loads(model_path.read_text())
        assert doc["target_section"] == "S03"
        assert doc["transfer"]["selected_step"] >= 1

        result = runner.invoke(main, [
            "predict", "--config", config, "--model", str(model_path),
            "--section", "S03"])
        assert result.exit_code == 0, result.output
        lines = [line for line in
                 (out / "predictions.csv").read_text().splitlines()
                 if line and not line.startswith("#")]
        assert lines[0] == "section,dow,hod,moh,prediction"
        assert len(lines) == 1 + 84

    def test_predict_with_missing_model_exits_one(self, pipeline_out):
        config, out = pipeline_out
        result = CliRunner().invoke(main, [
            "predict", "--config", config, "--model",
            str(out / "no_such_model.json")])
        assert result.exit_code == 1


class TestGridSearchCommand:
    def test_knn_grid_with_budget(self, pipeline_out):
        config, out = pipeline_out
        result = CliRunner().invoke(main, [
            "grid-search", "--config", config, "--model", "knn",
            "--target", "After_up_mean_speed", "--budget", "3"])
        assert result.exit_code == 0, result.output
        table = (out / "grid_knn_After_up_mean_speed.csv").read_text()
        rows = [line for line in table.splitlines()
                if line and not line.startswith("#")]
        assert rows[0] == "n_neighbors,mean_mae"
        assert len(rows) == 1 + 3
        best = json.loads(
            (out / "grid_knn_After_up_mean_speed_best.json").read_text())
        assert "n_neighbors" in best["best_params"]


class TestReportCommand:
    def test_reemission_is_byte_identical(self, pipeline_out):
        config, out = pipeline_out
        before = (out / "report_mae.csv").read_bytes()
        result = CliRunner().invoke(main, ["report", "--config", config])
        assert result.exit_code == 0, result.output
        assert (out / "report_mae.csv").read_bytes() == before
