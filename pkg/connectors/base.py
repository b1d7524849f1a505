import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from core import ParseError, Series


class IngestReport(BaseModel):
    """What happened while reading one CSV file."""

    source: str
    rows_read: int = 0
    rows_dropped: int = 0
    nan_counts: Dict[str, int] = Field(default_factory=dict)
    sample_rate_hz: float = 0.0
    time_span: Tuple[float, float] = (0.0, 0.0)
    errors: List[Dict[str, str]] = Field(default_factory=list)

    @property
    def rows_kept(self) -> int:
        return self.rows_read - self.rows_dropped


class BaseConnector:
    """Interface for connectors that turn recorded CSV files into typed series."""

    def __init__(self, *, strict: bool = False) -> None:
        self.strict = strict
        self.logger = logging.getLogger(__name__)

    def read(self, path, *args, **kwargs) -> Tuple[Series, IngestReport]:  # pragma: no cover
        raise NotImplementedError

    def _record_error(self, report: IngestReport, row: int, reason: str) -> None:
        if self.strict:
            raise ParseError(f"{report.source} row {row}: {reason}")
        report.errors.append({"row": str(row), "reason": reason})
        report.rows_dropped += 1
        self.logger.warning("Skipping %s row %d: %s", report.source, row, reason)

    def _load_table(self, path: Path, report: IngestReport) -> pd.DataFrame:
        """Read every cell as text. Rows with too many fields are recorded and skipped;
        rows with too few fields come back padded with NaN."""
        overflow: List[List[str]] = []

        def _on_bad_line(fields: List[str]) -> None:
            overflow.append(fields)
            return None

        table = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            engine="python",
            on_bad_lines=_on_bad_line,
        )
        report.rows_read = len(table) + len(overflow)
        for fields in overflow:
            stamp = fields[0] if fields else "?"
            self._record_error(report, -1, f"too many fields (t={stamp})")
        return table

    def _parse_table(self, table: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (values, unparseable-cell mask, short-row mask) for a text table."""
        cells = table.to_numpy(dtype=object)
        short_rows = table.isna().to_numpy().any(axis=1)
        parsed = np.empty(cells.shape, dtype=np.float64)
        bad = np.zeros(cells.shape, dtype=bool)
        for col in range(cells.shape[1]):
            column = np.where(short_rows, "", cells[:, col])
            parsed[:, col], bad[:, col] = self._parse_cells(column)
        return parsed, bad, short_rows

    def _write_table(self, path, columns: Dict[str, List[str]]) -> None:
        pd.DataFrame(columns).to_csv(path, index=False, lineterminator="\n")

    @staticmethod
    def _parse_cells(cells: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Convert a column of strings to floats; empty cells become NaN.

        Returns the values and a mask of cells that were non-empty but unparseable.
        """
        stripped = np.char.strip(cells.astype(str))
        empty = stripped == ""
        values = np.full(stripped.shape, np.nan)
        bad = np.zeros(stripped.shape, dtype=bool)
        filled = ~empty
        try:
            values[filled] = stripped[filled].astype(np.float64)
        except ValueError:
            for idx in np.flatnonzero(filled):
                try:
                    values[idx] = float(stripped[idx])
                except ValueError:
                    bad[idx] = True
        return values, bad

    @staticmethod
    def _dedupe_timestamps(
        timestamps: np.ndarray, values: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, int]:
        """Sort by time and keep the last occurrence of each duplicated timestamp."""
        order = np.argsort(timestamps, kind="stable")
        timestamps = timestamps[order]
        values = values[order]
        keep = np.ones(timestamps.shape[0], dtype=bool)
        keep[:-1] = timestamps[1:] != timestamps[:-1]
        return timestamps[keep], values[keep], int((~keep).sum())

    @staticmethod
    def _detect_rate(timestamps: np.ndarray) -> float:
        if timestamps.shape[0] < 2:
            return 0.0
        step = float(np.median(np.diff(timestamps)))
        return 1.0 / step if step > 0 else 0.0

    @staticmethod
    def _format_float(value: float) -> str:
        return "" if np.isnan(value) else repr(float(value))

    def _summarize(self, timestamps: np.ndarray, report: IngestReport) -> None:
        report.sample_rate_hz = self._detect_rate(timestamps)
        if timestamps.size:
            report.time_span = (float(timestamps[0]), float(timestamps[-1]))
        self.logger.info(
            "Read %s: %d rows, %d dropped, %.1f Hz",
            report.source,
            report.rows_read,
            report.rows_dropped,
            report.sample_rate_hz,
        )
