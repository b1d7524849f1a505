import json

import numpy as np
import pytest

from core import (
    FRAME_WIDTH,
    SKELETON_WIDTH,
    DataError,
    NumericError,
    SensorSeries,
    SkeletonSeries,
    TaskLabel,
)
from model import ModelConfig, load_weights
from numerics import RngStream, parameter
from preprocess import PreprocessConfig, Recording, SyncedDataset, window
from train import (
    OptimizerState,
    SchedulerConfig,
    SchedulerState,
    TrainConfig,
    adamw_step,
    clip_gradients,
    evaluate_loss,
    fit,
    plateau_scheduler,
    split_dataset,
    stack_windows,
)


def _dataset(frames: int = 64) -> SyncedDataset:
    rng = RngStream(5)
    t = np.arange(frames) * 0.01
    features = rng.normal((frames, FRAME_WIDTH))
    mixing = rng.normal((FRAME_WIDTH, SKELETON_WIDTH), 0.1)
    skeleton = 500.0 + 20.0 * features @ mixing
    return SyncedDataset(
        features=SensorSeries(t, features, sample_rate_hz=100.0),
        skeleton=SkeletonSeries(t, skeleton, sample_rate_hz=100.0),
        recordings=[Recording("Walk@0", TaskLabel.WALK, 0, frames, 0)],
    )


def _model() -> ModelConfig:
    return ModelConfig(d_model=16, layers=1, heads=2, window=8, precision="float64", dropout=0.0)


def test_train_config_validation():
    defaults = TrainConfig()
    assert (defaults.lr, defaults.weight_decay, defaults.epochs, defaults.batch_size) == (
        0.0005,
        0.001,
        200,
        32,
    )
    assert defaults.scheduler == SchedulerConfig(factor=0.5, patience=10, threshold=1e-4)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(split_ratio=1.5)


def test_adamw_first_step_matches_hand_computation():
    weights = {"w.weight": parameter(np.array([1.0, -2.0])), "w.bias": parameter(np.array([0.5]))}
    grads = {"w.weight": 2 * weights["w.weight"].data.copy(), "w.bias": np.array([1.0])}
    state = OptimizerState.create(weights)
    adamw_step(weights, grads, state, lr=0.1, weight_decay=0.01)

    decayed = np.array([1.0, -2.0]) * (1 - 0.1 * 0.01)
    m_hat = grads["w.weight"]
    v_hat = grads["w.weight"] ** 2
    expected = decayed - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(weights["w.weight"].data, expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(
        weights["w.bias"].data, [0.5 - 0.1 * 1.0 / (1.0 + 1e-8)], rtol=0, atol=1e-12
    )
    assert state.step == 1


def test_adamw_refuses_non_finite_gradients():
    weights = {"w.weight": parameter(np.array([1.0]))}
    state = OptimizerState.create(weights)
    with pytest.raises(NumericError):
        adamw_step(weights, {"w.weight": np.array([np.nan])}, state, lr=0.1)
    assert weights["w.weight"].data[0] == 1.0
    assert state.step == 0


def test_clip_gradients_scales_globally():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_gradients(grads, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8])
    untouched = {"a": np.array([0.3])}
    clip_gradients(untouched, 1.0)
    assert untouched["a"][0] == 0.3


def test_plateau_scheduler_reduces_after_patience():
    config = SchedulerConfig(factor=0.5, patience=2, threshold=1e-4, min_lr=0.2)
    state = SchedulerState(lr=1.0)
    losses = []
    rates = []
    for loss in [1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]:
        losses.append(loss)
        rates.append(plateau_scheduler(losses, state, config))
    assert rates == [1.0, 1.0, 1.0, 0.5, 0.5, 0.25, 0.25, 0.2]
    assert state.reductions == [4, 6, 8]
    with pytest.raises(DataError):
        plateau_scheduler([], SchedulerState(lr=1.0), config)


def test_split_dataset_is_chronological_per_recording():
    dataset = _dataset()
    windows = window(dataset, 8, 4)
    train, val = split_dataset(windows, 0.8)
    assert len(train) == 11
    assert len(val) == 2
    assert max(w.timestamps[-1] for w in train) < min(w.timestamps[0] for w in val)

    with pytest.raises(DataError):
        split_dataset(window(_dataset(16), 8, 8), 0.8)


def test_fit_writes_history_and_best_checkpoint(tmp_path):
    dataset = _dataset()
    train_config = TrainConfig(epochs=3, batch_size=4, lr=1e-3, seed=1, record_wall_time=False)
    preprocess = PreprocessConfig(window_stride=4)
    history, checkpoint_path = fit(
        dataset, _model(), train_config, tmp_path, preprocess, meta={"raw_hash": "abc"}
    )

    assert history.epoch == [1, 2, 3]
    assert history.seconds == [0.0, 0.0, 0.0]
    assert (tmp_path / "history.csv").read_text().startswith("epoch,train_loss,val_loss,lr")
    assert json.loads((tmp_path / "history.json").read_text())["best_epoch"] == history.best_epoch

    checkpoint = load_weights(checkpoint_path)
    assert checkpoint.meta["raw_hash"] == "abc"
    assert checkpoint.meta["epoch"] == history.best_epoch
    assert checkpoint.preprocess["window_stride"] == 4

    _, val = split_dataset(window(dataset, 8, 4), 0.8)
    x_val, y_val = stack_windows(val, checkpoint.target_stats, np.float64)
    reloaded = evaluate_loss(checkpoint.weights, checkpoint.config, x_val, y_val)
    assert reloaded == pytest.approx(min(history.val_loss), abs=1e-7)


def test_fit_is_reproducible(tmp_path):
    config = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=3, record_wall_time=False)
    model = ModelConfig(d_model=16, layers=1, heads=2, window=8, precision="float64")
    preprocess = PreprocessConfig(window_stride=4)
    first, _ = fit(_dataset(), model, config, tmp_path / "a", preprocess)
    second, _ = fit(_dataset(), model, config, tmp_path / "b", preprocess)
    assert first.train_loss == second.train_loss
    assert first.val_loss == second.val_loss
