"""Gap handling, smoothing, resampling, scaling, derivative features, synchronization,
windowing and the on-disk dataset artifact."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy.signal import butter, filtfilt

from connectors.insole import merge_feet
from core import (
    FRAME_WIDTH,
    GRID_PERIOD,
    SKELETON_WIDTH,
    AlignmentError,
    ChannelKind,
    CompatibilityError,
    ContractError,
    DataError,
    ParameterError,
    SensorSeries,
    Series,
    SkeletonSeries,
    TaskLabel,
    channel_mask,
    channel_names,
    to_root_relative,
)

logger = logging.getLogger(__name__)

S = TypeVar("S", bound=Series)

GRID_TOLERANCE = 1e-9
DATASET_FORMAT = "insole-pose-dataset"
DATASET_VERSION = 1
FEATURES_FILE = "features.f32"
SKELETON_FILE = "skeleton.f32"
HEADER_FILE = "header.json"


class PreprocessConfig(BaseModel):
    moving_average_window: int = 5
    lowpass_cutoff_hz: float = 6.0
    lowpass_order: int = 2
    max_gap_frames: int = 30
    grid_period: float = GRID_PERIOD
    min_overlap_s: float = 1.0
    window_length: int = 100
    window_stride: int = 25
    split_ratio: float = 0.8
    with_derivatives: bool = False
    root_relative: bool = False
    modalities: List[str] = Field(default_factory=lambda: [kind.value for kind in ChannelKind])
    disabled_taxels: List[str] = Field(default_factory=list)

    @field_validator("moving_average_window")
    @classmethod
    def _odd_window(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ParameterError(f"moving_average_window must be odd and >= 1, got {value}")
        return value

    @field_validator("split_ratio")
    @classmethod
    def _ratio_in_range(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ParameterError(f"split_ratio must lie in (0, 1), got {value}")
        return value

    @field_validator("window_length", "window_stride")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ParameterError("window length and stride must be positive")
        return value

    @field_validator("modalities")
    @classmethod
    def _known_modalities(cls, value: List[str]) -> List[str]:
        known = {kind.value for kind in ChannelKind}
        unknown = sorted(set(value) - known)
        if unknown or not value:
            raise ParameterError(f"modalities must be a non-empty subset of {sorted(known)}")
        return value

    @field_validator("disabled_taxels")
    @classmethod
    def _known_taxels(cls, value: List[str]) -> List[str]:
        is_pressure = channel_mask([ChannelKind.PRESSURE])
        pressure = {name for name, keep in zip(channel_names(), is_pressure, strict=True) if keep}
        unknown = sorted(set(value) - pressure)
        if unknown:
            raise ParameterError(f"Unknown taxel names: {', '.join(unknown)}")
        return value

    @property
    def feature_width(self) -> int:
        return FRAME_WIDTH * (3 if self.with_derivatives else 1)

    def active_channels(self) -> np.ndarray:
        """Boolean mask over the 82 sensor channels that stay live after standardization."""
        mask = channel_mask([ChannelKind(name) for name in self.modalities])
        names = channel_names()
        for taxel in self.disabled_taxels:
            mask[names.index(taxel)] = False
        return mask


@dataclass
class ChannelStats:
    """Per-channel min/max plus mean/std of the min-max-normalized training values."""

    minimum: np.ndarray
    maximum: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    @property
    def width(self) -> int:
        return int(self.minimum.shape[0])

    @property
    def span(self) -> np.ndarray:
        return np.where(self.constant, 1.0, self.maximum - self.minimum)

    def to_dict(self) -> Dict[str, List]:
        return {
            "min": self.minimum.tolist(),
            "max": self.maximum.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, List]) -> ChannelStats:
        try:
            stats = cls(
                np.asarray(payload["min"], dtype=np.float64),
                np.asarray(payload["max"], dtype=np.float64),
                np.asarray(payload["mean"], dtype=np.float64),
                np.asarray(payload["std"], dtype=np.float64),
                np.asarray(payload["constant"], dtype=bool),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CompatibilityError(f"Malformed channel stats: {exc}") from exc
        widths = {arr.shape for arr in (stats.minimum, stats.maximum, stats.mean, stats.std)}
        if len(widths) != 1 or stats.constant.shape != stats.minimum.shape:
            raise CompatibilityError("Channel stats arrays differ in width")
        return stats


@dataclass
class TargetStats:
    """Per-coordinate mean/std of the training skeleton frames, in millimetres."""

    mean: np.ndarray
    std: np.ndarray

    def standardize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def restore(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_dict(self) -> Dict[str, List]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: Dict[str, List]) -> TargetStats:
        try:
            mean = np.asarray(payload["mean"], dtype=np.float64)
            std = np.asarray(payload["std"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CompatibilityError(f"Malformed target stats: {exc}") from exc
        if mean.shape != (SKELETON_WIDTH,) or std.shape != (SKELETON_WIDTH,):
            raise CompatibilityError(f"Target stats must have {SKELETON_WIDTH} entries")
        return cls(mean, std)


@dataclass
class Recording:
    """A contiguous, single-task run of rows inside a SyncedDataset."""

    name: str
    task: TaskLabel
    start_row: int
    rows: int
    first_index: int

    @property
    def stop_row(self) -> int:
        return self.start_row + self.rows

    def to_dict(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "task": self.task.value,
            "start_row": self.start_row,
            "rows": self.rows,
            "first_index": self.first_index,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> Recording:
        return cls(
            name=str(payload["name"]),
            task=TaskLabel(payload["task"]),
            start_row=int(payload["start_row"]),  # type: ignore[arg-type]
            rows=int(payload["rows"]),  # type: ignore[arg-type]
            first_index=int(payload["first_index"]),  # type: ignore[arg-type]
        )


@dataclass
class SyncedDataset:
    features: SensorSeries
    skeleton: SkeletonSeries
    recordings: List[Recording]
    stats: ChannelStats | None = None
    target_stats: TargetStats | None = None
    grid_period: float = GRID_PERIOD
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.features) != len(self.skeleton):
            raise AlignmentError(
                f"{len(self.features)} feature frames but {len(self.skeleton)} skeleton frames"
            )
        if not np.array_equal(self.features.timestamps, self.skeleton.timestamps):
            raise AlignmentError("Feature and skeleton timestamps differ")

    def __len__(self) -> int:
        return len(self.features)

    def recording_rows(self, recording: Recording) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = slice(recording.start_row, recording.stop_row)
        return (
            self.features.timestamps[rows],
            self.features.values[rows],
            self.skeleton.values[rows],
        )

    def frame_tasks(self) -> List[TaskLabel]:
        tasks: List[TaskLabel] = []
        for recording in self.recordings:
            tasks.extend([recording.task] * recording.rows)
        return tasks


@dataclass
class Window:
    features: np.ndarray
    targets: np.ndarray
    timestamps: np.ndarray
    recording: int
    task: TaskLabel


def zero_fill(series: S) -> S:
    return series.replace(values=np.nan_to_num(series.values, nan=0.0))


def interpolate_gaps(series: SkeletonSeries, max_gap: int = 30) -> List[SkeletonSeries]:
    """Linearly bridge NaN runs of at most `max_gap` frames per coordinate.

    Longer runs, and NaN frames at either end of any coordinate, are cut out; the
    remaining gap-free stretches are returned in time order.
    """
    values = np.array(series.values)
    index = np.arange(len(series))
    usable = np.ones(len(series), dtype=bool)
    for col in range(values.shape[1]):
        missing = np.isnan(values[:, col])
        if missing.all():
            raise DataError(f"Skeleton coordinate {col} is entirely missing")
        if not missing.any():
            continue
        valid = ~missing
        first, last = np.flatnonzero(valid)[[0, -1]]
        usable[:first] = False
        usable[last + 1 :] = False
        for start, stop in _runs(missing):
            if start > first and stop <= last and stop - start > max_gap:
                usable[start:stop] = False
        values[missing, col] = np.interp(index[missing], index[valid], values[valid, col])

    segments: List[SkeletonSeries] = []
    for start, stop in _runs(usable):
        if stop - start >= 2:
            segments.append(series.replace(series.timestamps[start:stop], values[start:stop]))
    if len(segments) > 1:
        logger.info("Skeleton split into %d segments at long gaps", len(segments))
    if not segments:
        raise DataError("No gap-free skeleton stretch of at least two frames")
    return segments


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Half-open [start, stop) ranges where mask is True."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist(), strict=True))


def moving_average(series: S, window: int) -> S:
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"Moving-average window must be odd and >= 1, got {window}")
    if window > len(series):
        raise ParameterError(f"Window {window} exceeds series length {len(series)}")
    if window == 1:
        return series
    kernel = np.ones(window)
    counts = np.convolve(np.ones(len(series)), kernel, mode="same")
    smoothed = np.empty_like(series.values)
    for col in range(series.width):
        smoothed[:, col] = np.convolve(series.values[:, col], kernel, mode="same") / counts
    return series.replace(values=smoothed)


def lowpass(series: S, cutoff_hz: float, sample_rate_hz: float, order: int = 2) -> S:
    """Zero-phase Butterworth low-pass (forward then backward pass)."""
    nyquist = 0.5 * sample_rate_hz
    if not 0 < cutoff_hz < nyquist:
        raise ParameterError(
            f"Cutoff {cutoff_hz} Hz must lie between 0 and Nyquist ({nyquist} Hz)"
        )
    b, a = butter(order, cutoff_hz / nyquist, btype="low")
    padlen = 3 * max(len(a), len(b))
    if len(series) <= padlen:
        raise DataError(f"Low-pass needs more than {padlen} frames, got {len(series)}")
    return series.replace(values=filtfilt(b, a, series.values, axis=0))


def grid_indices(timestamps: np.ndarray, period: float) -> np.ndarray:
    return np.rint(np.asarray(timestamps) / period).astype(np.int64)


def resample(series: S, period: float = GRID_PERIOD) -> S:
    """Linear interpolation onto timestamps k*period inside the source span."""
    if len(series) < 2:
        raise DataError("Resampling needs at least two frames")
    t0, t_last = series.span
    if t_last - t0 < period:
        raise DataError(f"Series spans {t_last - t0:.4f} s, shorter than one period")
    first = math.ceil(t0 / period - GRID_TOLERANCE)
    last = math.floor(t_last / period + GRID_TOLERANCE)
    grid = np.arange(first, last + 1) * period
    values = np.empty((grid.shape[0], series.width))
    for col in range(series.width):
        values[:, col] = np.interp(grid, series.timestamps, series.values[:, col])
    return series.replace(grid, values, sample_rate_hz=1.0 / period)


def fit_stats(values: np.ndarray | Series) -> ChannelStats:
    data = values.values if isinstance(values, Series) else np.asarray(values, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("Channel statistics need a non-empty 2-d block of frames")
    minimum = data.min(axis=0)
    maximum = data.max(axis=0)
    constant = maximum == minimum
    normalized = (data - minimum) / np.where(constant, 1.0, maximum - minimum)
    mean = normalized.mean(axis=0)
    std = normalized.std(axis=0)
    std = np.where(constant | (std == 0), 1.0, std)
    if constant.any():
        logger.info("%d constant channels flagged", int(constant.sum()))
    return ChannelStats(minimum, maximum, mean, std, constant)


def normalize_standardize_values(values: np.ndarray, stats: ChannelStats) -> np.ndarray:
    if values.shape[-1] != stats.width:
        raise ParameterError(f"Stats cover {stats.width} channels, data has {values.shape[-1]}")
    return ((values - stats.minimum) / stats.span - stats.mean) / stats.std


def normalize_standardize(series: S, stats: ChannelStats) -> S:
    return series.replace(values=normalize_standardize_values(series.values, stats))


def fit_target_stats(values: np.ndarray) -> TargetStats:
    if values.ndim != 2 or values.shape[1] != SKELETON_WIDTH or not values.shape[0]:
        raise DataError("Target statistics need a non-empty (frames, 63) block")
    std = values.std(axis=0)
    return TargetStats(values.mean(axis=0), np.where(std > 1e-9, std, 1.0))


def _check_uniform(timestamps: np.ndarray, dt: float) -> None:
    if timestamps.shape[0] > 1 and not np.allclose(np.diff(timestamps), dt, rtol=0, atol=1e-9):
        raise ContractError(f"Derivatives need a uniform {dt} s grid")


def derivative_values(values: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    if values.shape[0] < 3:
        raise DataError("Derivatives need at least three frames")
    first = np.empty_like(values)
    first[1:-1] = (values[2:] - values[:-2]) / (2 * dt)
    first[0] = (values[1] - values[0]) / dt
    first[-1] = (values[-1] - values[-2]) / dt
    second = np.empty_like(values)
    second[1:-1] = (values[2:] - 2 * values[1:-1] + values[:-2]) / dt**2
    second[0] = second[1]
    second[-1] = second[-2]
    return first, second


def derivatives(series: S, dt: float = GRID_PERIOD) -> Tuple[S, S]:
    """Central differences inside, one-sided first-order differences at the ends."""
    _check_uniform(series.timestamps, dt)
    first, second = derivative_values(series.values, dt)
    return series.replace(values=first), series.replace(values=second)


def feature_names(with_derivatives: bool) -> List[str]:
    names = channel_names()
    if not with_derivatives:
        return names
    return [*names, *(f"{n}.d1" for n in names), *(f"{n}.d2" for n in names)]


def build_features(
    series: SensorSeries, with_derivatives: bool, dt: float = GRID_PERIOD
) -> SensorSeries:
    if not with_derivatives:
        return series
    first, second = derivatives(series, dt)
    values = np.hstack([series.values, first.values, second.values])
    return series.replace(values=values)


def synchronize(
    features: SensorSeries,
    skeleton: SkeletonSeries,
    period: float = GRID_PERIOD,
    min_overlap_s: float = 1.0,
) -> SyncedDataset:
    """Trim both grid-aligned series to their common time range."""
    sensor_k = grid_indices(features.timestamps, period)
    skeleton_k = grid_indices(skeleton.timestamps, period)
    for name, series, k in (("sensor", features, sensor_k), ("skeleton", skeleton, skeleton_k)):
        if len(series) and not np.allclose(series.timestamps, k * period, rtol=0, atol=1e-6):
            raise ContractError(f"{name} series is not on the {period} s grid")
        if k.shape[0] > 1 and not np.all(np.diff(k) == 1):
            raise ContractError(f"{name} series has holes in its grid")
    if not len(features) or not len(skeleton):
        raise AlignmentError("Cannot synchronize an empty series")

    lo = max(int(sensor_k[0]), int(skeleton_k[0]))
    hi = min(int(sensor_k[-1]), int(skeleton_k[-1]))
    if hi < lo:
        raise AlignmentError("Sensor and skeleton time ranges do not intersect")
    if (hi - lo) * period < min_overlap_s - GRID_TOLERANCE:
        raise AlignmentError(
            f"Sensor/skeleton overlap {(hi - lo) * period:.2f} s is shorter than {min_overlap_s} s"
        )

    grid = np.arange(lo, hi + 1) * period
    s_rows = slice(lo - int(sensor_k[0]), hi - int(sensor_k[0]) + 1)
    k_rows = slice(lo - int(skeleton_k[0]), hi - int(skeleton_k[0]) + 1)
    synced_features = features.replace(grid, features.values[s_rows])
    synced_skeleton = skeleton.replace(grid, skeleton.values[k_rows])
    recording = Recording(
        name=f"{features.task.value}@{lo}",
        task=features.task,
        start_row=0,
        rows=grid.shape[0],
        first_index=lo,
    )
    return SyncedDataset(synced_features, synced_skeleton, [recording], grid_period=period)


def split_boundary(timestamps: np.ndarray, ratio: float) -> float:
    t0, t1 = float(timestamps[0]), float(timestamps[-1])
    return t0 + ratio * (t1 - t0)


def window(dataset: SyncedDataset, length: int = 100, stride: int = 25) -> List[Window]:
    """Overlapping windows per recording; a trailing partial window is dropped."""
    windows: List[Window] = []
    for idx, recording in enumerate(dataset.recordings):
        timestamps, features, targets = dataset.recording_rows(recording)
        if recording.rows < length:
            logger.warning(
                "Recording %s has %d frames, fewer than one window", recording.name, recording.rows
            )
            continue
        for start in range(0, recording.rows - length + 1, stride):
            stop = start + length
            windows.append(
                Window(
                    features=features[start:stop],
                    targets=targets[start:stop],
                    timestamps=timestamps[start:stop],
                    recording=idx,
                    task=recording.task,
                )
            )
    if not windows:
        raise DataError(f"Dataset has no recording of at least {length} frames")
    return windows


@dataclass
class TaskSegment:
    task: TaskLabel
    start: float
    end: float


def prepare_sensors(
    left: SensorSeries, right: SensorSeries, config: PreprocessConfig
) -> SensorSeries:
    """Merge feet, zero-fill, smooth and resample the sensor stream onto the grid."""
    merged, unpaired = merge_feet(left, right)
    if unpaired:
        logger.warning("Dropped %d unpaired insole frames", unpaired)
    smoothed = moving_average(zero_fill(merged), config.moving_average_window)
    return resample(smoothed, config.grid_period)


def prepare_skeleton(skeleton: SkeletonSeries, config: PreprocessConfig) -> List[SkeletonSeries]:
    """Bridge gaps, low-pass at the source rate and resample each gap-free segment."""
    prepared: List[SkeletonSeries] = []
    rate = skeleton.sample_rate_hz
    if rate <= 0:
        rate = 1.0 / float(np.median(np.diff(skeleton.timestamps)))
    for segment in interpolate_gaps(skeleton, config.max_gap_frames):
        if config.root_relative:
            segment = to_root_relative(segment)
        try:
            filtered = lowpass(segment, config.lowpass_cutoff_hz, rate, config.lowpass_order)
            prepared.append(resample(filtered, config.grid_period))
        except DataError as exc:
            logger.warning("Skipping skeleton segment at %.2f s: %s", segment.span[0], exc)
    return prepared


def standardize_sensors(
    series: SensorSeries, stats: ChannelStats, config: PreprocessConfig
) -> SensorSeries:
    standardized = normalize_standardize_values(series.values, stats)
    standardized[:, ~config.active_channels()] = 0.0
    return series.replace(values=standardized)


def featurize(series: SensorSeries, stats: ChannelStats, config: PreprocessConfig) -> SensorSeries:
    return build_features(
        standardize_sensors(series, stats, config), config.with_derivatives, config.grid_period
    )


def build_dataset(
    sensors: SensorSeries,
    skeleton_segments: Sequence[SkeletonSeries],
    task_segments: Sequence[TaskSegment],
    config: PreprocessConfig,
) -> SyncedDataset:
    """Synchronize, cut into single-task recordings, fit stats on the training portions,
    standardize and attach derivative features."""
    blocks: List[Tuple[np.ndarray, np.ndarray, np.ndarray, TaskLabel]] = []
    for segment in skeleton_segments:
        try:
            synced = synchronize(sensors, segment, config.grid_period, config.min_overlap_s)
        except AlignmentError as exc:
            logger.warning("Skipping skeleton segment: %s", exc)
            continue
        stamps = synced.features.timestamps
        for task_segment in task_segments:
            inside = (stamps >= task_segment.start - GRID_TOLERANCE) & (
                stamps < task_segment.end - GRID_TOLERANCE
            )
            if inside.any():
                blocks.append(
                    (
                        stamps[inside],
                        synced.features.values[inside],
                        synced.skeleton.values[inside],
                        task_segment.task,
                    )
                )

    min_rows = (
        math.ceil(config.window_length / (1.0 - config.split_ratio)) + config.window_stride + 1
    )
    usable = []
    for block in blocks:
        if block[0].shape[0] < min_rows:
            logger.warning(
                "Dropping %s recording with %d frames (needs %d for a train/val split)",
                block[3].value,
                block[0].shape[0],
                min_rows,
            )
            continue
        usable.append(block)
    if not usable:
        raise AlignmentError("No synchronized recording is long enough to train on")
    usable.sort(key=lambda block: float(block[0][0]))

    train_sensor = []
    train_skeleton = []
    for stamps, sensor_values, skeleton_values, _ in usable:
        in_train = stamps < split_boundary(stamps, config.split_ratio)
        train_sensor.append(sensor_values[in_train])
        train_skeleton.append(skeleton_values[in_train])
    stats = fit_stats(np.vstack(train_sensor))
    target_stats = fit_target_stats(np.vstack(train_skeleton))

    recordings: List[Recording] = []
    feature_blocks: List[np.ndarray] = []
    skeleton_blocks: List[np.ndarray] = []
    stamp_blocks: List[np.ndarray] = []
    row = 0
    for stamps, sensor_values, skeleton_values, task in usable:
        block = SensorSeries(stamps, sensor_values, task=task)
        features = featurize(block, stats, config)
        first_index = int(grid_indices(stamps[:1], config.grid_period)[0])
        recordings.append(
            Recording(f"{task.value}@{first_index}", task, row, stamps.shape[0], first_index)
        )
        row += stamps.shape[0]
        feature_blocks.append(features.values)
        skeleton_blocks.append(skeleton_values)
        stamp_blocks.append(stamps)

    timestamps = np.concatenate(stamp_blocks)
    rate = 1.0 / config.grid_period
    logger.info("Built dataset: %d recordings, %d frames", len(recordings), timestamps.shape[0])
    return SyncedDataset(
        features=SensorSeries(timestamps, np.vstack(feature_blocks), sample_rate_hz=rate),
        skeleton=SkeletonSeries(timestamps, np.vstack(skeleton_blocks), sample_rate_hz=rate),
        recordings=recordings,
        stats=stats,
        target_stats=target_stats,
        grid_period=config.grid_period,
    )


def save_dataset(
    dataset: SyncedDataset,
    directory: Path,
    config: PreprocessConfig,
    config_hash: str,
    raw_hash: str,
) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    dataset.features.values.astype("<f4").tofile(directory / FEATURES_FILE)
    dataset.skeleton.values.astype("<f4").tofile(directory / SKELETON_FILE)
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "features_shape": list(dataset.features.values.shape),
        "skeleton_shape": list(dataset.skeleton.values.shape),
        "dtype": "<f4",
        "grid_period": dataset.grid_period,
        "channel_names": feature_names(config.with_derivatives),
        "with_derivatives": config.with_derivatives,
        "stats": dataset.stats.to_dict() if dataset.stats else None,
        "target_stats": dataset.target_stats.to_dict() if dataset.target_stats else None,
        "preprocess": config.model_dump(),
        "config_hash": config_hash,
        "raw_hash": raw_hash,
        "recordings": [recording.to_dict() for recording in dataset.recordings],
    }
    path = directory / HEADER_FILE
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_header(directory: Path) -> Dict[str, object]:
    path = directory / HEADER_FILE
    if not path.exists():
        raise CompatibilityError(f"No dataset header at {path}")
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CompatibilityError(f"Unreadable dataset header {path}: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise CompatibilityError(f"{path} is not a {DATASET_FORMAT} header")
    if header.get("version") != DATASET_VERSION:
        raise CompatibilityError(f"Unsupported dataset version {header.get('version')}")
    return header


def load_dataset(directory: Path) -> Tuple[SyncedDataset, PreprocessConfig, Dict[str, object]]:
    header = read_header(directory)
    try:
        config = PreprocessConfig(**header["preprocess"])
        features_shape = tuple(int(v) for v in header["features_shape"])
        skeleton_shape = tuple(int(v) for v in header["skeleton_shape"])
        period = float(header["grid_period"])
        recordings = [Recording.from_dict(item) for item in header["recordings"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CompatibilityError(f"Malformed dataset header: {exc}") from exc
    if features_shape[1] != config.feature_width or skeleton_shape[1] != SKELETON_WIDTH:
        raise CompatibilityError(
            f"Header widths {features_shape[1]}/{skeleton_shape[1]} do not match "
            f"expected {config.feature_width}/{SKELETON_WIDTH}"
        )
    features = _read_block(directory / FEATURES_FILE, features_shape)
    skeleton = _read_block(directory / SKELETON_FILE, skeleton_shape)
    if sum(r.rows for r in recordings) != features_shape[0]:
        raise CompatibilityError("Recording rows do not add up to the feature rows")

    timestamps = np.concatenate(
        [(r.first_index + np.arange(r.rows)) * period for r in recordings]
    )
    stats_payload: Dict = header.get("stats") or {}  # type: ignore[assignment]
    targets_payload: Dict = header.get("target_stats") or {}  # type: ignore[assignment]
    stats = ChannelStats.from_dict(stats_payload) if stats_payload else None
    target_stats = TargetStats.from_dict(targets_payload) if targets_payload else None
    dataset = SyncedDataset(
        features=SensorSeries(timestamps, features, sample_rate_hz=1.0 / period),
        skeleton=SkeletonSeries(timestamps, skeleton, sample_rate_hz=1.0 / period),
        recordings=recordings,
        stats=stats,
        target_stats=target_stats,
        grid_period=period,
        meta={
            "raw_hash": header.get("raw_hash", ""),
            "config_hash": header.get("config_hash", ""),
        },
    )
    return dataset, config, header


def _read_block(path: Path, shape: Tuple[int, ...]) -> np.ndarray:
    if not path.exists():
        raise CompatibilityError(f"Missing dataset array {path.name}")
    data = np.fromfile(path, dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise CompatibilityError(
            f"{path.name} holds {data.size} values, header expects shape {list(shape)}"
        )
    return data.reshape(shape).astype(np.float64)
