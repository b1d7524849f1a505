import argparse
import json

import numpy as np
import pytest

import main
from core import (
    FRAME_WIDTH,
    JOINT_COUNT,
    CheckpointError,
    DataError,
    EmissionError,
    GuardError,
    NumericError,
    ParameterError,
    TaskLabel,
)
from evaluate import build_report

SHORT_CONFIG = """
preset = "desk"

[synth]
tasks = ["Squat", "Walk"]
duration_s = 3.0
seed = 4
dropout_prob = 0.0

[preprocess]
window_length = 8
window_stride = 4

[model]
d_model = 16
layers = 1
heads = 2
window = 8
dropout = 0.0
precision = "float64"

[train]
epochs = 2
batch_size = 16
lr = 0.001
record_wall_time = false
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SHORT_CONFIG)
    return path


def _namespace(**values) -> argparse.Namespace:
    defaults = {"seed": None, "epochs": None, "derivatives": None, "precision": None}
    return argparse.Namespace(**{**defaults, **values})


def test_load_run_config_reads_sections(config_path):
    run = main.load_run_config(config_path)
    assert run.synth.tasks == ["Squat", "Walk"]
    assert run.model.d_model == 16
    assert run.train.epochs == 2
    assert main.load_run_config().model == main.PRESETS["desk"]()
    assert main.load_run_config(preset="full").model.d_model == 512


def test_load_run_config_rejects_bad_files(tmp_path):
    with pytest.raises(ParameterError, match="not found"):
        main.load_run_config(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[synth\n")
    with pytest.raises(ParameterError):
        main.load_run_config(broken)
    unknown = tmp_path / "unknown.toml"
    unknown.write_text("[server]\nport = 1\n")
    with pytest.raises(ParameterError, match="server"):
        main.load_run_config(unknown)
    with pytest.raises(ParameterError, match="preset"):
        main.load_run_config(preset="laptop")
    invalid = tmp_path / "invalid.toml"
    invalid.write_text("[train]\nlr = -1.0\n")
    with pytest.raises(ValueError):
        main.load_run_config(invalid)


def test_apply_overrides_threads_cli_flags(config_path):
    run = main.load_run_config(config_path)
    updated = main.apply_overrides(
        run, _namespace(seed=7, epochs=5, derivatives="on", precision="float32")
    )
    assert (updated.synth.seed, updated.model.seed, updated.train.seed) == (7, 7, 7)
    assert updated.train.epochs == 5
    assert updated.preprocess.with_derivatives
    assert updated.train.with_derivatives
    assert updated.model.input_width == 3 * FRAME_WIDTH
    assert updated.model.precision == "float32"
    assert updated.model.d_model == 16
    assert updated.config_hash() != run.config_hash()
    assert main.apply_overrides(run, _namespace()).config_hash() == run.config_hash()


def test_exit_codes_follow_error_family():
    assert main.exit_code_for(NumericError("nan")) == 1
    assert main.exit_code_for(ParameterError("bad")) == 2
    assert main.exit_code_for(EmissionError("disk")) == 3
    assert main.exit_code_for(FileNotFoundError("gone")) == 3
    assert main.exit_code_for(DataError("short")) == 4
    assert main.exit_code_for(CheckpointError("magic")) == 5
    assert main.exit_code_for(GuardError("seed")) == 6
    assert main.exit_code_for(ValueError("other")) == 2


def test_missing_config_exits_with_config_code(tmp_path, capsys):
    code = main.main(["synth", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_ablate_refuses_mismatched_seeds(tmp_path):
    code = main.main(
        [
            "ablate",
            str(tmp_path / "with"),
            str(tmp_path / "without"),
            "--seed-with",
            "1",
            "--seed-without",
            "2",
            "--out",
            str(tmp_path / "ablate"),
        ]
    )
    assert code == 6


def test_pipeline_end_to_end(tmp_path, config_path, monkeypatch):
    monkeypatch.setenv(main.OUTPUT_ROOT_ENV, str(tmp_path / "default"))
    common = ["--config", str(config_path)]
    raw = tmp_path / "raw"
    artifacts = tmp_path / "artifacts"
    run_dir = tmp_path / "run"
    report_dir = tmp_path / "report"

    assert main.main(["synth", *common, "--out", str(raw)]) == 0
    assert (raw / "manifest.json").exists()
    assert json.loads((raw / main.RUN_MANIFEST).read_text())["seeds"]["synth"] == 4

    assert main.main(["preprocess", str(raw), *common, "--out", str(artifacts)]) == 0
    manifest = json.loads((artifacts / main.RUN_MANIFEST).read_text())
    assert set(manifest["inputs"]) == {"left", "right", "mocap"}

    code = main.main(["train", str(artifacts), *common, "--derivatives", "on"])
    assert code == 5
    assert not (tmp_path / "default" / "train" / "best.ckpt").exists()

    assert main.main(["train", str(artifacts), *common, "--out", str(run_dir)]) == 0
    checkpoint = run_dir / "best.ckpt"
    assert checkpoint.exists()
    assert (run_dir / "history.csv").read_text().count("\n") == 3

    eval_args = ["eval", str(checkpoint), str(artifacts), *common, "--out", str(report_dir)]
    assert main.main(eval_args) == 0
    report = json.loads((report_dir / "report.json").read_text())
    assert set(report["tasks"]) == {"Squat", "Walk"}
    assert report["baseline_rmse"] > 0
    assert (report_dir / "per_part.csv").exists()

    prediction = tmp_path / "prediction.csv"
    code = main.main(
        [
            "predict",
            str(checkpoint),
            "--left",
            str(raw / "left_insole.csv"),
            "--right",
            str(raw / "right_insole.csv"),
            *common,
            "--out",
            str(prediction),
        ]
    )
    assert code == 0
    assert prediction.read_text().startswith("t,")


def test_report_compares_with_baseline_tables(tmp_path, capsys):
    errors = np.full((4, JOINT_COUNT), 20.0)
    report = build_report(errors, [TaskLabel.SQUAT] * 2 + [TaskLabel.WALK] * 2)
    report_path = tmp_path / "report.json"
    report_path.write_text(report.model_dump_json())
    table = tmp_path / "published.csv"
    table.write_text("Task,RMSE\nSquat,40.0\nWalk,10.0\nJump,5.0\n")
    out_dir = tmp_path / "compare"

    code = main.main(
        ["report", str(report_path), "--baseline", f"published={table}", "--out", str(out_dir)]
    )
    assert code == 0
    rows = (out_dir / "compare_published.csv").read_text().splitlines()
    assert rows[0].startswith("Task,RMSE published,RMSE model")
    assert len(rows) == 3
    assert "Wrote 3 comparison files" in capsys.readouterr().out

    broken = ["report", str(report_path), "--baseline", "broken", "--out", str(out_dir)]
    assert main.main(broken) == 2
