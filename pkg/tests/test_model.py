import json
import struct

import numpy as np
import pytest

from core import (
    FRAME_WIDTH,
    SKELETON_WIDTH,
    CheckpointError,
    DataError,
    ParameterError,
    SensorSeries,
    ShapeError,
)
from model import (
    MAGIC,
    ModelConfig,
    forward,
    init,
    is_decayed,
    load_weights,
    positional_encoding,
    predict_series,
    save_weights,
    weight_shapes,
    window_starts,
)
from numerics import RngStream, check_gradients, mse_loss, parameter
from preprocess import TargetStats


def _tiny(**overrides) -> ModelConfig:
    params = {
        "d_model": 16,
        "layers": 2,
        "heads": 2,
        "window": 8,
        "precision": "float64",
        "dropout": 0.0,
        **overrides,
    }
    return ModelConfig(**params)


def test_config_presets_and_validation():
    full = ModelConfig.full()
    assert (full.d_model, full.layers, full.heads, full.dropout) == (512, 8, 8, 0.1)
    assert full.ff_dim == 2048
    desk = ModelConfig.desk(precision="float64")
    assert desk.d_model == 64
    assert desk.dtype is np.float64
    with pytest.raises(ValueError):
        ModelConfig(d_model=30, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(input_width=100)
    with pytest.raises(ValueError):
        ModelConfig(precision="float16")


def test_weight_shapes_and_decay_groups():
    config = _tiny()
    shapes = weight_shapes(config)
    assert shapes["input_proj.weight"] == (FRAME_WIDTH, 16)
    assert shapes["output_head.weight"] == (16, SKELETON_WIDTH)
    assert shapes["layers.1.ff.w1.weight"] == (16, 64)
    assert is_decayed("layers.0.attn.q.weight")
    assert not is_decayed("layers.0.attn.q.bias")
    assert not is_decayed("final_norm.gain")


def test_init_is_seeded():
    a = init(_tiny(seed=4))
    b = init(_tiny(seed=4))
    c = init(_tiny(seed=5))
    for name in ("layers.0.attn.q.weight", "output_head.weight"):
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert not np.array_equal(a["input_proj.weight"].data, c["input_proj.weight"].data)
    assert np.all(a["final_norm.gain"].data == 1.0)
    assert np.all(a["output_head.bias"].data == 0.0)


def test_positional_encoding_values():
    table = positional_encoding(4, 6)
    np.testing.assert_allclose(table[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    assert table[1, 0] == pytest.approx(np.sin(1.0))
    assert table[1, 1] == pytest.approx(np.cos(1.0))


def test_forward_shapes_and_attention_rows():
    config = _tiny()
    weights = init(config)
    batch = RngStream(1).normal((3, 8, FRAME_WIDTH))
    capture = []
    output = forward(weights, config, batch, capture=capture)
    assert output.shape == (3, 8, SKELETON_WIDTH)
    assert len(capture) == 2
    assert capture[0].shape == (3, 2, 8, 8)
    for probs in capture:
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    with pytest.raises(ShapeError):
        forward(weights, config, batch[:, :, :10])


def test_dropout_only_changes_training_passes():
    config = _tiny(dropout=0.1)
    weights = init(config)
    batch = RngStream(2).normal((2, 8, FRAME_WIDTH))
    eval_a = forward(weights, config, batch).data
    eval_b = forward(weights, config, batch).data
    np.testing.assert_array_equal(eval_a, eval_b)
    train_a = forward(weights, config, batch, training=True, rng=RngStream(9)).data
    train_b = forward(weights, config, batch, training=True, rng=RngStream(9)).data
    np.testing.assert_array_equal(train_a, train_b)
    assert not np.allclose(train_a, eval_a)


def test_full_model_gradient_check():
    config = _tiny()
    weights = init(config)
    rng = RngStream(11)
    for name, tensor in weights.items():
        if name.endswith(".bias"):
            tensor.data[...] = rng.normal(tensor.shape, 0.1)
    batch = rng.normal((2, 8, FRAME_WIDTH))
    target = rng.normal((2, 8, SKELETON_WIDTH))

    error = check_gradients(
        lambda: mse_loss(forward(weights, config, batch), target), weights, samples=200
    )
    assert error < 1e-4


def test_window_starts_cover_the_tail():
    assert window_starts(100, 100, 25) == [0]
    assert window_starts(120, 100, 25) == [0, 20]
    assert window_starts(150, 100, 25) == [0, 25, 50]
    with pytest.raises(DataError):
        window_starts(99, 100)


def test_predict_series_matches_forward_on_one_window():
    config = _tiny()
    weights = init(config)
    values = RngStream(3).normal((8, FRAME_WIDTH))
    series = SensorSeries(np.arange(8) * 0.01, values)
    stats = TargetStats(np.full(SKELETON_WIDTH, 100.0), np.full(SKELETON_WIDTH, 2.0))

    predicted = predict_series(weights, config, series, stats)
    raw = forward(weights, config, values[None]).data[0]
    np.testing.assert_allclose(predicted.values, raw * 2.0 + 100.0)
    np.testing.assert_array_equal(predicted.timestamps, series.timestamps)


def test_predict_series_averages_overlapping_windows():
    config = _tiny()
    weights = init(config)
    values = RngStream(4).normal((13, FRAME_WIDTH))
    series = SensorSeries(np.arange(13) * 0.01, values)
    predicted = predict_series(weights, config, series, stride=4)

    first = forward(weights, config, values[None, 0:8]).data[0]
    second = forward(weights, config, values[None, 4:12]).data[0]
    last = forward(weights, config, values[None, 5:13]).data[0]
    np.testing.assert_allclose(predicted.values[0], first[0])
    np.testing.assert_allclose(predicted.values[5], (first[5] + second[1] + last[0]) / 3)
    np.testing.assert_allclose(predicted.values[12], last[7])

    narrow = SensorSeries(np.arange(13) * 0.01, values[:, :40])
    with pytest.raises(ShapeError):
        predict_series(weights, config, narrow)


def test_checkpoint_round_trip(tmp_path):
    config = _tiny(seed=2)
    weights = init(config)
    stats = TargetStats(np.zeros(SKELETON_WIDTH), np.ones(SKELETON_WIDTH))
    path = save_weights(
        tmp_path / "best.ckpt", weights, config, target_stats=stats, meta={"epoch": 3}
    )
    assert path.read_bytes()[:4] == MAGIC
    assert not (tmp_path / "best.ckpt.tmp").exists()

    loaded = load_weights(path)
    assert loaded.config == config
    assert loaded.meta == {"epoch": 3}
    assert loaded.stats is None
    for name, tensor in weights.items():
        assert loaded.weights[name].data.dtype == np.float64
        np.testing.assert_array_equal(loaded.weights[name].data, tensor.data)


def test_checkpoint_rejects_corruption(tmp_path):
    config = _tiny()
    path = save_weights(tmp_path / "best.ckpt", init(config), config)
    blob = path.read_bytes()

    bad_magic = tmp_path / "magic.ckpt"
    bad_magic.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="magic"):
        load_weights(bad_magic)

    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(blob[:-8])
    with pytest.raises(ValueError):
        load_weights(truncated)

    padded = tmp_path / "long.ckpt"
    padded.write_bytes(blob + b"\0" * 8)
    with pytest.raises(ValueError, match="trailing"):
        load_weights(padded)


def test_init_matches_xavier_variance_at_full_width():
    config = ModelConfig.full(layers=1)
    matrix = init(config)["input_proj.weight"].data
    expected = 2.0 / (FRAME_WIDTH + config.d_model)
    assert abs(matrix.var() - expected) <= 0.2 * expected


def test_positional_encoding_range_and_period():
    table = positional_encoding(50, 16)
    assert np.all(np.abs(table) <= 1.0)
    np.testing.assert_allclose(table[:, 0], np.sin(np.arange(50)))
    np.testing.assert_allclose(table[0, 0::2], 0.0)
    np.testing.assert_allclose(table[0, 1::2], 1.0)
    with pytest.raises(ParameterError):
        positional_encoding(0, 16)


def test_forward_depends_on_frame_order():
    config = _tiny()
    weights = init(config)
    batch = RngStream(6).normal((1, 8, FRAME_WIDTH))
    order = np.array([3, 0, 1, 2, 7, 5, 6, 4])
    output = forward(weights, config, batch).data
    shuffled = forward(weights, config, batch[:, order]).data
    assert not np.allclose(shuffled, output[:, order])


def test_output_bias_shift_moves_every_frame():
    config = _tiny()
    weights = init(config)
    batch = RngStream(7).normal((2, 8, FRAME_WIDTH))
    before = forward(weights, config, batch).data
    delta = np.linspace(-5.0, 5.0, SKELETON_WIDTH)
    weights["output_head.bias"].data += delta
    after = forward(weights, config, batch).data
    np.testing.assert_allclose(after - before, np.broadcast_to(delta, before.shape), atol=1e-9)


def test_checkpoint_header_and_dtype(tmp_path):
    config = _tiny(precision="float32")
    path = save_weights(tmp_path / "m.ckpt", init(config), config)
    blob = path.read_bytes()
    assert blob[:4] == b"P2PI"
    version, header_len = struct.unpack_from("<II", blob, 4)
    assert version == 1
    header = json.loads(blob[12 : 12 + header_len])
    assert {entry["dtype"] for entry in header["tensors"]} == {"<f4"}
    assert load_weights(path).weights["output_head.weight"].data.dtype == np.float32


def test_checkpoint_save_names_mismatched_tensor(tmp_path):
    config = _tiny()
    weights = init(config)
    weights["output_head.bias"] = parameter(np.zeros(SKELETON_WIDTH - 1), name="output_head.bias")
    with pytest.raises(CheckpointError, match="output_head.bias"):
        save_weights(tmp_path / "m.ckpt", weights, config)

    with pytest.raises(CheckpointError, match="input_proj.weight"):
        save_weights(tmp_path / "m.ckpt", init(_tiny(d_model=32, heads=4)), config)


def test_checkpoint_load_names_mismatched_tensor(tmp_path):
    config = _tiny()
    path = save_weights(tmp_path / "m.ckpt", init(config), config)
    blob = path.read_bytes()
    header_len = struct.unpack_from("<II", blob, 4)[1]
    header = json.loads(blob[12 : 12 + header_len])
    for entry in header["tensors"]:
        if entry["name"] == "final_norm.gain":
            entry["shape"] = [config.d_model + 1]
    edited = json.dumps(header).encode("utf-8")
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(
        blob[:4] + struct.pack("<II", 1, len(edited)) + edited + blob[12 + header_len :]
    )
    with pytest.raises(CheckpointError, match="final_norm.gain") as info:
        load_weights(broken)
    assert info.value.field_name == "final_norm.gain"
