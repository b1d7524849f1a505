import numpy as np
import pytest

from connectors.insole import read_insole_csv
from connectors.mocap import read_mocap_csv
from core import (
    PRESSURE_CHANNELS,
    EmissionError,
    FootSide,
    JointId,
    LayoutError,
    ParameterError,
    TaskLabel,
)
from synth import (
    HIP_HEIGHT_MM,
    RECORDED_TASKS,
    AmplifierParams,
    SynthConfig,
    TaxelLayout,
    distribute_load,
    emit_dataset,
    foot_pressures,
    generate_skeleton,
    imu_forward,
    load_layout,
    load_manifest,
    pressure_forward,
    template_for,
    voltage_to_adc,
)

BONES = (
    (JointId.HIPS, JointId.L_THIGH),
    (JointId.L_THIGH, JointId.L_SHIN),
    (JointId.L_SHIN, JointId.L_FOOT),
    (JointId.R_SHIN, JointId.R_FOOT),
    (JointId.R_FOOT, JointId.R_TOE),
    (JointId.CHEST, JointId.NECK),
    (JointId.L_FARM, JointId.L_HAND),
)


def test_default_layout_is_symmetric():
    layout = load_layout()
    assert len(layout.names) == PRESSURE_CHANNELS
    left = layout.positions(FootSide.LEFT)
    right = layout.positions(FootSide.RIGHT)
    np.testing.assert_allclose(right[:, 0], -left[:, 0])
    as_set = sorted(map(tuple, np.round(left, 6)))
    assert as_set == sorted(map(tuple, np.round(right, 6)))


def test_layout_rejects_bad_geometry():
    positions = np.zeros((PRESSURE_CHANNELS, 2))
    positions[:, 1] = np.linspace(0.0, 1.0, PRESSURE_CHANNELS)
    names = [f"p{i:02d}" for i in range(PRESSURE_CHANNELS)]
    TaxelLayout(names, positions)
    with pytest.raises(LayoutError):
        TaxelLayout(names[:-1], positions[:-1])
    outside = positions.copy()
    outside[3, 1] = 1.5
    with pytest.raises(LayoutError):
        TaxelLayout(names, outside)
    duplicate = positions.copy()
    duplicate[1] = duplicate[0]
    with pytest.raises(LayoutError):
        TaxelLayout(names, duplicate)


@pytest.mark.parametrize("task", RECORDED_TASKS)
def test_bone_lengths_stay_constant(task):
    series = generate_skeleton(template_for(task), 4.0, 120.0, seed=1)
    joints = series.joints
    assert series.task is task
    for a, b in BONES:
        lengths = np.linalg.norm(joints[:, a] - joints[:, b], axis=1)
        assert lengths.var() < 1e-6


def test_squat_lowers_hips_by_amplitude():
    series = generate_skeleton(template_for(TaskLabel.SQUAT), 4.0, 120.0)
    hips_y = series.joints[:, JointId.HIPS, 1]
    assert hips_y.max() == pytest.approx(HIP_HEIGHT_MM)
    assert hips_y.max() - hips_y.min() == pytest.approx(300.0, abs=1e-6)


def test_distribute_load_conserves_weight():
    layout = load_layout()
    loads = np.array([350.0, 0.0, 700.0])
    cop = np.array([[0.0, 0.5], [0.1, 0.2], [-0.1, 0.8]])
    taxels = distribute_load(loads, cop, layout.positions())
    assert taxels.shape == (3, PRESSURE_CHANNELS)
    assert np.all(taxels >= 0)
    np.testing.assert_allclose(taxels.sum(axis=1), loads, rtol=1e-9)


def test_tilt_keeps_total_load_constant():
    template = template_for(TaskLabel.TILT_LEFT_RIGHT)
    series = generate_skeleton(template, 4.0, 100.0)
    loads = template.loads(series.timestamps)
    pressures = foot_pressures(series.joints, loads, load_layout(), 700.0)
    totals = pressures.sum(axis=1)
    np.testing.assert_allclose(totals, 700.0, rtol=1e-6)
    left = pressures[:, :PRESSURE_CHANNELS].sum(axis=1)
    assert left.max() > 550.0
    assert left.min() < 150.0


def test_mirrored_pose_swaps_feet():
    template = template_for(TaskLabel.ONE_LEG_STAND)
    layout = load_layout()
    t = np.arange(50) / 100.0
    original = generate_skeleton(template, 0.5, 100.0, seed=3)
    mirrored = generate_skeleton(template.mirrored(), 0.5, 100.0, seed=3)
    a = foot_pressures(original.joints, template.loads(t), layout, 700.0)
    b = foot_pressures(mirrored.joints, template.mirrored().loads(t), layout, 700.0)
    np.testing.assert_allclose(b[:, :PRESSURE_CHANNELS], a[:, PRESSURE_CHANNELS:], atol=1e-9)
    np.testing.assert_allclose(b[:, PRESSURE_CHANNELS:], a[:, :PRESSURE_CHANNELS], atol=1e-9)
    assert a[:, :PRESSURE_CHANNELS].sum() == 0.0


def test_pressure_forward_matches_sequence():
    template = template_for(TaskLabel.WALK)
    layout = load_layout()
    series = generate_skeleton(template, 2.0, 100.0)
    frame = next(series.frames())
    single = pressure_forward(frame, template, 0.0, layout)
    batch = foot_pressures(series.joints[:1], template.loads(np.array([0.0])), layout, 700.0)
    np.testing.assert_allclose(single, batch[0])


def test_imu_at_rest_reads_gravity():
    template = template_for(TaskLabel.ONE_LEG_STAND, sway_mm=0.0)
    series = generate_skeleton(template, 1.0, 100.0)
    for side in FootSide:
        imu = imu_forward(series, side)
        assert imu.shape == (100, 6)
        np.testing.assert_allclose(imu[:, :3], 0.0, atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(imu[:, 3:], axis=1), 9.81, rtol=1e-9)
    with pytest.raises(ParameterError):
        imu_forward(series, FootSide.LEFT, gyro_noise=0.1)


def test_voltage_to_adc_saturates():
    params = AmplifierParams()
    counts = voltage_to_adc(np.array([0.0, 10.0, 1e6]), params, sensitivity=0.02)
    assert counts[0] == 0
    assert counts[1] == round(0.2 * 2 / 3.3 * 4095)
    assert counts[2] == 4095
    with pytest.raises(ParameterError):
        voltage_to_adc(np.array([-1.0]), params)


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(tasks=["Cartwheel"])
    with pytest.raises(ValueError):
        SynthConfig(tasks=[])
    with pytest.raises(ValueError):
        SynthConfig(duration_s=1.0)
    with pytest.raises(ValueError):
        SynthConfig(offsets={"mocap": 0.0, "left": 0.1})
    with pytest.raises(ValueError):
        SynthConfig(dropout_prob=1.0)
    assert SynthConfig().task_labels == list(RECORDED_TASKS)


def _small_config(**overrides) -> SynthConfig:
    return SynthConfig(**{"tasks": ["Squat", "Walk"], "duration_s": 3.0, **overrides})


def test_emit_dataset_writes_readable_files(tmp_path):
    manifest = emit_dataset(_small_config(), tmp_path)
    assert [seg.task for seg in manifest.segments] == ["Squat", "Walk"]
    assert manifest.segments[1].start == pytest.approx(3.0)
    assert sum(seg.mocap_rows for seg in manifest.segments) == 720

    reloaded = load_manifest(tmp_path)
    assert reloaded == manifest
    assert [s.task for s in reloaded.task_segments()] == [TaskLabel.SQUAT, TaskLabel.WALK]

    left_path = tmp_path / "left_insole.csv"
    left, report = read_insole_csv(left_path, FootSide.LEFT, manifest.amplifier)
    assert report.rows_read == 600
    assert left.timestamps[0] == pytest.approx(0.3)
    assert report.sample_rate_hz == pytest.approx(100.0)
    mocap, mocap_report = read_mocap_csv(tmp_path / "mocap.csv")
    assert len(mocap) == 720
    assert mocap_report.sample_rate_hz == pytest.approx(120.0)


def test_ten_seconds_emit_a_thousand_rows_per_foot(tmp_path):
    config = SynthConfig(tasks=["Walk"], duration_s=10.0, dropout_prob=0.0)
    manifest = emit_dataset(config, tmp_path)
    for name, side in (("left_insole.csv", FootSide.LEFT), ("right_insole.csv", FootSide.RIGHT)):
        _, report = read_insole_csv(tmp_path / name, side, manifest.amplifier)
        assert abs(report.rows_read - 1000) <= 1


def test_emit_dataset_is_deterministic(tmp_path):
    emit_dataset(_small_config(seed=5), tmp_path / "a")
    emit_dataset(_small_config(seed=5), tmp_path / "b")
    emit_dataset(_small_config(seed=6), tmp_path / "c")
    for name in ("left_insole.csv", "right_insole.csv", "mocap.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "left_insole.csv").read_bytes() != (
        tmp_path / "c" / "left_insole.csv"
    ).read_bytes()


def test_emit_dataset_reports_unwritable_target(tmp_path):
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory")
    with pytest.raises(EmissionError):
        emit_dataset(_small_config(), blocker)
