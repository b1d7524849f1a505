from pathlib import Path
from typing import Tuple

import numpy as np

from connectors.base import BaseConnector, IngestReport
from core import AXES, JOINT_NAMES, SKELETON_WIDTH, FormatError, SkeletonSeries, mocap_columns


class MocapConnector(BaseConnector):
    """Skeleton exports: `t` followed by `<Joint>.x/.y/.z` for each of the 21 joints (mm)."""

    def read(self, path) -> Tuple[SkeletonSeries, IngestReport]:
        path = Path(path)
        report = IngestReport(source=path.name)
        table = self._load_table(path, report)

        if "t" not in table.columns:
            raise FormatError(f"{path.name}: missing time column 't'")
        for joint in JOINT_NAMES:
            for axis in AXES:
                if f"{joint}.{axis}" not in table.columns:
                    raise FormatError(f"{path.name}: missing column for joint {joint}")

        columns = ["t", *mocap_columns()]
        extra = [name for name in table.columns if name not in columns]
        if extra:
            self.logger.info("Ignoring %d extra columns in %s", len(extra), path.name)
        parsed, bad, short_rows = self._parse_table(table[columns])

        keep = ~(short_rows | bad.any(axis=1) | np.isnan(parsed[:, 0]))
        for row in np.flatnonzero(~keep):
            reason = "missing fields" if short_rows[row] else "unparseable or missing timestamp"
            self._record_error(report, int(row) + 2, reason)
        parsed = parsed[keep]
        for name, column in zip(columns[1:], parsed[:, 1:].T, strict=True):
            missing = int(np.isnan(column).sum())
            if missing:
                report.nan_counts[name] = missing

        timestamps, values, duplicates = self._dedupe_timestamps(parsed[:, 0], parsed[:, 1:])
        report.rows_dropped += duplicates
        self._summarize(timestamps, report)
        series = SkeletonSeries(
            timestamps,
            values,
            sample_rate_hz=report.sample_rate_hz,
            meta={"source": report.source},
        )
        return series, report

    def export_csv(self, path, series: SkeletonSeries) -> None:
        if series.width != SKELETON_WIDTH:
            raise FormatError(f"Skeleton export needs {SKELETON_WIDTH} columns")
        columns = {"t": [self._format_float(t) for t in series.timestamps]}
        for idx, name in enumerate(mocap_columns()):
            columns[name] = [self._format_float(v) for v in series.values[:, idx]]
        self._write_table(path, columns)


def read_mocap_csv(path, *, strict: bool = False) -> Tuple[SkeletonSeries, IngestReport]:
    return MocapConnector(strict=strict).read(path)


def write_mocap_csv(path, series: SkeletonSeries) -> None:
    MocapConnector().export_csv(path, series)
