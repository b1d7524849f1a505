import numpy as np
import pytest

from connectors.insole import (
    IMU_COLUMNS,
    INSOLE_COLUMNS,
    AmplifierParams,
    InsoleConnector,
    adc_to_sensor_voltage,
    amplifier_gain,
    merge_feet,
    read_imu_csv,
    read_insole_csv,
    sensor_voltage_to_count,
    substitute_imu,
)
from connectors.mocap import read_mocap_csv, write_mocap_csv
from core import (
    FOOT_WIDTH,
    FRAME_WIDTH,
    SKELETON_WIDTH,
    AlignmentError,
    FootSide,
    FormatError,
    ParseError,
    SensorSeries,
    SkeletonSeries,
    mocap_columns,
)


def _insole_row(t: str, p00: str, rest: int = 100) -> str:
    pressures = [p00] + [str(rest)] * 34
    imu = ["0.0", "0.1", "0.2", "0.0", "-9.81", "0.0"]
    return ",".join([t, *pressures, *imu])


def _write_insole(path, rows):
    path.write_text("\n".join([",".join(INSOLE_COLUMNS), *rows]) + "\n", encoding="utf-8")
    return path


def test_amplifier_conversion():
    params = AmplifierParams()
    assert amplifier_gain(params) == pytest.approx(2.0)
    assert adc_to_sensor_voltage(4095, params) == pytest.approx(1.65)
    assert adc_to_sensor_voltage(0, params) == 0.0
    assert sensor_voltage_to_count(1.65, params) == 4095
    with pytest.raises(ParseError):
        adc_to_sensor_voltage(4096, params)


def test_amplifier_rejects_bad_resistors():
    with pytest.raises(ValueError):
        AmplifierParams(r1_ohms=0)
    with pytest.raises(ValueError):
        AmplifierParams(r2_ohms=-1.0)


def test_read_insole_skips_bad_rows_and_keeps_last_duplicate(tmp_path):
    path = _write_insole(
        tmp_path / "left_insole.csv",
        [
            _insole_row("0.00", "4095"),
            _insole_row("0.01", ""),
            _insole_row("0.02", "abc"),
            _insole_row("0.03", "5000"),
            _insole_row("0.01", "0"),
        ],
    )
    series, report = read_insole_csv(path, FootSide.LEFT, AmplifierParams())

    assert series.width == FOOT_WIDTH
    np.testing.assert_allclose(series.timestamps, [0.0, 0.01])
    assert series.values[0, 0] == pytest.approx(1.65)
    assert series.values[1, 0] == 0.0
    assert series.values[0, 35 + 4] == pytest.approx(-9.81)
    assert report.rows_read == 5
    assert report.rows_dropped == 3
    assert report.nan_counts == {"p00": 1}
    assert len(report.errors) == 2
    assert series.meta["side"] == "L"


def test_read_insole_strict_mode_raises(tmp_path):
    path = _write_insole(
        tmp_path / "left_insole.csv", [_insole_row("0.00", "1"), _insole_row("0.01", "abc")]
    )
    with pytest.raises(ParseError):
        read_insole_csv(path, FootSide.LEFT, AmplifierParams(), strict=True)


def test_read_insole_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,p00\n0.0,1\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_insole_csv(path, FootSide.RIGHT, AmplifierParams())


def test_export_series_then_read_matches_counts(tmp_path):
    params = AmplifierParams()
    counts = np.tile(np.arange(35.0) * 100, (3, 1))
    counts[1, 4] = np.nan
    imu = np.zeros((3, 6))
    path = tmp_path / "right_insole.csv"
    InsoleConnector().export_counts(path, np.array([0.0, 0.01, 0.02]), counts, imu)

    series, report = read_insole_csv(path, FootSide.RIGHT, params)
    assert len(series) == 3
    assert np.isnan(series.values[1, 4])
    assert report.nan_counts == {"p04": 1}
    expected = adc_to_sensor_voltage(counts[0], params)
    np.testing.assert_allclose(series.values[0, :35], expected)


def test_read_imu_and_substitute(tmp_path):
    path = tmp_path / "left_imu.csv"
    InsoleConnector().export_imu(
        path, np.array([0.005, 0.015]), np.array([[1.0] * 6, [3.0] * 6])
    )
    imu, _ = read_imu_csv(path)
    assert imu.width == len(IMU_COLUMNS)

    insole = SensorSeries(np.array([0.0, 0.01, 0.02]), np.zeros((3, FOOT_WIDTH)))
    swapped = substitute_imu(insole, imu)
    assert np.isnan(swapped.values[0, 35])
    assert swapped.values[1, 35] == pytest.approx(2.0)
    assert np.isnan(swapped.values[2, 40])
    assert np.all(swapped.values[:, :35] == 0.0)


def test_merge_feet_pairs_nearest_frames():
    left = SensorSeries(np.array([0.0, 0.01, 0.02]), np.ones((3, FOOT_WIDTH)))
    right = SensorSeries(np.array([0.001, 0.011, 0.5]), np.full((3, FOOT_WIDTH), 2.0))
    merged, unpaired = merge_feet(left, right)
    assert merged.width == FRAME_WIDTH
    np.testing.assert_allclose(merged.timestamps, [0.0, 0.01])
    assert np.all(merged.values[:, :FOOT_WIDTH] == 1.0)
    assert np.all(merged.values[:, FOOT_WIDTH:] == 2.0)
    assert unpaired == 2


def test_merge_feet_requires_overlap():
    left = SensorSeries(np.array([0.0, 0.01]), np.zeros((2, FOOT_WIDTH)))
    right = SensorSeries(np.array([5.0, 5.01]), np.zeros((2, FOOT_WIDTH)))
    with pytest.raises(AlignmentError):
        merge_feet(left, right)


def test_mocap_write_then_read(tmp_path):
    values = np.arange(2 * SKELETON_WIDTH, dtype=float).reshape(2, SKELETON_WIDTH)
    values[1, 5] = np.nan
    path = tmp_path / "mocap.csv"
    write_mocap_csv(path, SkeletonSeries(np.array([0.0, 1 / 120]), values))

    series, report = read_mocap_csv(path)
    assert len(series) == 2
    assert np.isnan(series.values[1, 5])
    assert series.values[0, 62] == 62.0
    assert report.nan_counts == {mocap_columns()[5]: 1}
    assert report.sample_rate_hz == pytest.approx(120.0)


def test_mocap_missing_joint_column(tmp_path):
    columns = ["t", *mocap_columns()[:-3]]
    path = tmp_path / "mocap.csv"
    path.write_text(",".join(columns) + "\n" + ",".join(["0"] * len(columns)) + "\n")
    with pytest.raises(FormatError):
        read_mocap_csv(path)
