import json

import pytest

import main
from model import ModelConfig, forward, init
from numerics import RngStream, mse_loss, zero_grads
from preprocess import fit_target_stats, load_dataset
from synth import SynthConfig, emit_dataset
from train import OptimizerState, adamw_step, collect_grads

GENERALIZATION_CONFIG = """
preset = "desk"

[preprocess]
window_length = 100
window_stride = 10

[train]
epochs = 40
batch_size = 16
lr = 0.001
"""


def _synthetic_artifacts(tmp_path, config: SynthConfig, run_config: list[str]):
    raw, artifacts = tmp_path / "raw", tmp_path / "artifacts"
    emit_dataset(config, raw)
    assert main.main(["preprocess", str(raw), *run_config, "--out", str(artifacts)]) == 0
    return artifacts


def test_desk_model_overfits_one_synthetic_window(tmp_path):
    artifacts = _synthetic_artifacts(
        tmp_path, SynthConfig(tasks=["Squat"], duration_s=4.0, seed=3, dropout_prob=0.0), []
    )
    dataset, _, _ = load_dataset(artifacts)
    config = ModelConfig.desk(dropout=0.0, precision="float64", input_width=dataset.features.width)
    first = dataset.recordings[0].start_row
    rows = slice(first, first + config.window)
    features = dataset.features.values[rows][None]
    targets = fit_target_stats(dataset.skeleton.values).standardize(
        dataset.skeleton.values[rows]
    )[None]

    weights = init(config)
    state = OptimizerState.create(weights)
    rng = RngStream(0)
    losses = []
    for _ in range(500):
        zero_grads(weights.values())
        loss = mse_loss(forward(weights, config, features, training=True, rng=rng), targets)
        loss.backward()
        adamw_step(weights, collect_grads(weights), state, lr=1e-3)
        losses.append(float(loss.data))
    final = float(mse_loss(forward(weights, config, features), targets).data)
    assert final * 100 <= losses[0]


@pytest.mark.slow
def test_desk_model_beats_mean_pose_on_a_minute_of_tasks(tmp_path):
    config_path = tmp_path / "run.toml"
    config_path.write_text(GENERALIZATION_CONFIG)
    common = ["--config", str(config_path)]
    synth = SynthConfig(
        tasks=["OneLegStand", "TiltLeftRight", "Bow", "StandAndSit", "Squat", "Walk"],
        duration_s=10.0,
        seed=2,
    )
    artifacts = _synthetic_artifacts(tmp_path, synth, common)
    run_dir, report_dir = tmp_path / "run", tmp_path / "report"

    assert main.main(["train", str(artifacts), *common, "--out", str(run_dir)]) == 0
    checkpoint = run_dir / "best.ckpt"
    assert main.main(["eval", str(checkpoint), str(artifacts), "--out", str(report_dir)]) == 0

    report = json.loads((report_dir / "report.json").read_text())
    assert report["meta"]["frames"] > 0
    assert report["overall_rmse"] <= 0.7 * report["baseline_rmse"]
