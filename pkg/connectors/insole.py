from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from connectors.base import BaseConnector, IngestReport
from core import (
    FOOT_WIDTH,
    PRESSURE_CHANNELS,
    AlignmentError,
    FootSide,
    FormatError,
    ParameterError,
    ParseError,
    SensorSeries,
)

PRESSURE_COLUMNS = [f"p{idx:02d}" for idx in range(PRESSURE_CHANNELS)]
IMU_COLUMNS = ["gx", "gy", "gz", "ax", "ay", "az"]
INSOLE_COLUMNS = ["t", *PRESSURE_COLUMNS, *IMU_COLUMNS]
IMU_FILE_COLUMNS = ["t", *IMU_COLUMNS]
PAIRING_TOLERANCE_S = 0.005


class AmplifierParams(BaseModel):
    """Non-inverting amplifier in front of the ADC: V_out = (1 + R2/R1) * V_lef."""

    r1_ohms: float = 10_000.0
    r2_ohms: float = 10_000.0
    supply_volts: float = 3.3
    adc_bits: int = Field(default=12, ge=8, le=16)

    @model_validator(mode="after")
    def _check_resistors(self) -> "AmplifierParams":
        if self.r1_ohms <= 0:
            raise ParameterError(f"R1 must be positive, got {self.r1_ohms}")
        if self.r2_ohms < 0:
            raise ParameterError(f"R2 must be non-negative, got {self.r2_ohms}")
        if self.supply_volts <= 0:
            raise ParameterError(f"Supply voltage must be positive, got {self.supply_volts}")
        return self

    @property
    def full_scale(self) -> int:
        return 2**self.adc_bits - 1


def amplifier_gain(params: AmplifierParams) -> float:
    if params.r1_ohms <= 0:
        raise ParameterError(f"R1 must be positive, got {params.r1_ohms}")
    return 1.0 + params.r2_ohms / params.r1_ohms


def adc_to_sensor_voltage(count, params: AmplifierParams):
    """Invert the amplifier: ADC count -> voltage across the sensing element (V_lef).

    Accepts a scalar or an array of counts; NaN entries pass through unchanged.
    """
    counts = np.asarray(count, dtype=np.float64)
    finite = counts[np.isfinite(counts)]
    if finite.size and (finite.min() < 0 or finite.max() > params.full_scale):
        raise ParseError(f"ADC count outside 0..{params.full_scale}")
    volts = counts / params.full_scale * params.supply_volts / amplifier_gain(params)
    return float(volts) if volts.ndim == 0 else volts


def sensor_voltage_to_count(volts, params: AmplifierParams) -> np.ndarray:
    scaled = np.asarray(volts, dtype=np.float64) * amplifier_gain(params) / params.supply_volts
    return np.clip(np.rint(scaled * params.full_scale), 0, params.full_scale)


class InsoleConnector(BaseConnector):
    """Reads and writes the per-foot insole files and the standalone ankle IMU file."""

    def read(
        self, path, side: FootSide, params: AmplifierParams
    ) -> Tuple[SensorSeries, IngestReport]:
        path = Path(path)
        report = IngestReport(source=path.name)
        table = self._load_table(path, report)
        self._check_header(path, table, INSOLE_COLUMNS)
        parsed, bad, short_rows = self._parse_table(table)

        counts = np.nan_to_num(parsed[:, 1 : 1 + PRESSURE_CHANNELS], nan=0.0)
        out_of_range = (counts < 0) | (counts > params.full_scale) | (counts != np.floor(counts))

        keep = np.ones(parsed.shape[0], dtype=bool)
        for row in range(parsed.shape[0]):
            reason = ""
            if short_rows[row]:
                reason = "missing fields"
            elif bad[row].any():
                reason = f"unparseable cell in column {INSOLE_COLUMNS[int(np.argmax(bad[row]))]}"
            elif np.isnan(parsed[row, 0]):
                reason = "missing timestamp"
            elif out_of_range[row].any():
                reason = f"ADC count outside 0..{params.full_scale}"
            if reason:
                keep[row] = False
                self._record_error(report, row + 2, reason)

        parsed = parsed[keep]
        self._count_missing(parsed, INSOLE_COLUMNS, report)
        values = parsed[:, 1:].copy()
        values[:, :PRESSURE_CHANNELS] = adc_to_sensor_voltage(values[:, :PRESSURE_CHANNELS], params)
        timestamps, values, duplicates = self._dedupe_timestamps(parsed[:, 0], values)
        report.rows_dropped += duplicates
        self._summarize(timestamps, report)
        series = SensorSeries(
            timestamps,
            values,
            sample_rate_hz=report.sample_rate_hz,
            meta={"side": side.value, "source": report.source},
        )
        return series, report

    def read_imu(self, path) -> Tuple[SensorSeries, IngestReport]:
        path = Path(path)
        report = IngestReport(source=path.name)
        table = self._load_table(path, report)
        self._check_header(path, table, IMU_FILE_COLUMNS)
        parsed, bad, short_rows = self._parse_table(table)
        keep = ~(short_rows | bad.any(axis=1) | np.isnan(parsed[:, 0]))
        for row in np.flatnonzero(~keep):
            self._record_error(report, int(row) + 2, "malformed IMU row")
        parsed = parsed[keep]
        self._count_missing(parsed, IMU_FILE_COLUMNS, report)
        timestamps, values, duplicates = self._dedupe_timestamps(parsed[:, 0], parsed[:, 1:])
        report.rows_dropped += duplicates
        self._summarize(timestamps, report)
        series = SensorSeries(
            timestamps,
            values,
            sample_rate_hz=report.sample_rate_hz,
            meta={"side": "imu", "source": report.source},
        )
        return series, report

    def export_counts(
        self, path, timestamps: np.ndarray, counts: np.ndarray, imu: np.ndarray
    ) -> None:
        """Write an insole file from raw ADC counts (NaN -> empty cell) and IMU channels."""
        columns = {"t": [self._format_float(t) for t in timestamps]}
        for idx, name in enumerate(PRESSURE_COLUMNS):
            columns[name] = ["" if np.isnan(c) else str(int(c)) for c in counts[:, idx]]
        for idx, name in enumerate(IMU_COLUMNS):
            columns[name] = [self._format_float(v) for v in imu[:, idx]]
        self._write_table(path, columns)

    def export_series(self, path, series: SensorSeries, params: AmplifierParams) -> None:
        if series.width != FOOT_WIDTH:
            raise FormatError(f"Insole export needs a {FOOT_WIDTH}-wide series")
        volts = series.values[:, :PRESSURE_CHANNELS]
        counts = np.where(np.isnan(volts), np.nan, sensor_voltage_to_count(volts, params))
        self.export_counts(path, series.timestamps, counts, series.values[:, PRESSURE_CHANNELS:])

    def export_imu(self, path, timestamps: np.ndarray, imu: np.ndarray) -> None:
        columns = {"t": [self._format_float(t) for t in timestamps]}
        for idx, name in enumerate(IMU_COLUMNS):
            columns[name] = [self._format_float(v) for v in imu[:, idx]]
        self._write_table(path, columns)

    @staticmethod
    def _check_header(path: Path, table: pd.DataFrame, expected: List[str]) -> None:
        if list(table.columns) != expected:
            raise FormatError(
                f"{path.name}: expected {len(expected)} columns {expected[0]}..{expected[-1]}, "
                f"got {len(table.columns)}"
            )

    @staticmethod
    def _count_missing(parsed: np.ndarray, columns: List[str], report: IngestReport) -> None:
        for name, column in zip(columns[1:], parsed[:, 1:].T, strict=True):
            missing = int(np.isnan(column).sum())
            if missing:
                report.nan_counts[name] = missing


def read_insole_csv(
    path, side: FootSide, params: AmplifierParams, *, strict: bool = False
) -> Tuple[SensorSeries, IngestReport]:
    return InsoleConnector(strict=strict).read(path, side, params)


def read_imu_csv(path, *, strict: bool = False) -> Tuple[SensorSeries, IngestReport]:
    return InsoleConnector(strict=strict).read_imu(path)


def substitute_imu(insole: SensorSeries, imu: SensorSeries) -> SensorSeries:
    """Replace the insole's own gyro/accel channels with an ankle IMU stream.

    The IMU is linearly interpolated onto the insole timestamps; instants outside
    the IMU's span become NaN and are zero-filled downstream.
    """
    if insole.width != FOOT_WIDTH or imu.width != len(IMU_COLUMNS):
        raise FormatError("substitute_imu needs a 41-wide insole series and a 6-wide IMU series")
    values = np.array(insole.values)
    for idx in range(len(IMU_COLUMNS)):
        values[:, PRESSURE_CHANNELS + idx] = np.interp(
            insole.timestamps, imu.timestamps, imu.values[:, idx], left=np.nan, right=np.nan
        )
    return insole.replace(values=values)


def merge_feet(
    left: SensorSeries, right: SensorSeries, tolerance: float = PAIRING_TOLERANCE_S
) -> Tuple[SensorSeries, int]:
    """Pair each left frame with the nearest right frame; returns the merged series and
    the number of frames left unpaired on either side."""
    if not len(left) or not len(right):
        raise AlignmentError("Both feet need at least one frame")
    (l_start, l_end), (r_start, r_end) = left.span, right.span
    if l_end < r_start - tolerance or r_end < l_start - tolerance:
        raise AlignmentError(
            f"Left [{l_start:.3f}, {l_end:.3f}] and right [{r_start:.3f}, {r_end:.3f}] "
            "recordings do not overlap"
        )

    upper = np.clip(np.searchsorted(right.timestamps, left.timestamps), 0, len(right) - 1)
    lower = np.clip(upper - 1, 0, len(right) - 1)
    gap_upper = np.abs(right.timestamps[upper] - left.timestamps)
    gap_lower = np.abs(right.timestamps[lower] - left.timestamps)
    nearest = np.where(gap_lower <= gap_upper, lower, upper)
    paired = np.minimum(gap_lower, gap_upper) <= tolerance
    if not paired.any():
        raise AlignmentError("No left/right frame pairs within tolerance")

    merged = np.hstack([left.values[paired], right.values[nearest[paired]]])
    unpaired = int((~paired).sum()) + (len(right) - len(np.unique(nearest[paired])))
    series = SensorSeries(
        left.timestamps[paired],
        merged,
        subject=left.subject,
        task=left.task,
        sample_rate_hz=left.sample_rate_hz,
        meta={"unpaired": unpaired},
    )
    return series, unpaired
