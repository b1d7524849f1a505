"""Shared vocabulary: units, joint taxonomy, frame layouts, series containers and errors.

Coordinates are millimetres in a right-handed, Y-up frame with the origin at the
capture-volume centre; +X points to the subject's left and +Z forward.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

GRID_PERIOD = 0.01
PRESSURE_CHANNELS = 35
GYRO_CHANNELS = 3
ACCEL_CHANNELS = 3
FOOT_WIDTH = PRESSURE_CHANNELS + GYRO_CHANNELS + ACCEL_CHANNELS
FRAME_WIDTH = 2 * FOOT_WIDTH
JOINT_COUNT = 21
SKELETON_WIDTH = JOINT_COUNT * 3
AXES = ("x", "y", "z")


class InsoleError(ValueError):
    """Base class for every error raised by this package."""


class LayoutError(InsoleError):
    pass


class ParameterError(InsoleError):
    pass


class FormatError(InsoleError):
    pass


class ParseError(InsoleError):
    pass


class AlignmentError(InsoleError):
    pass


class DataError(InsoleError):
    pass


class ContractError(InsoleError):
    pass


class ShapeError(InsoleError):
    pass


class NumericError(InsoleError):
    def __init__(self, message: str, layer: int | None = None) -> None:
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class CheckpointError(InsoleError):
    def __init__(self, message: str, field_name: str = "") -> None:
        super().__init__(f"{field_name}: {message}" if field_name else message)
        self.field_name = field_name


class ReportError(InsoleError):
    pass


class CompatibilityError(InsoleError):
    pass


class GuardError(InsoleError):
    pass


class EmissionError(InsoleError):
    pass


class FootSide(enum.Enum):
    LEFT = "L"
    RIGHT = "R"


class ChannelKind(enum.Enum):
    PRESSURE = "pressure"
    GYRO = "gyro"
    ACCEL = "accel"


_KIND_OFFSETS = {
    ChannelKind.PRESSURE: (0, PRESSURE_CHANNELS),
    ChannelKind.GYRO: (PRESSURE_CHANNELS, GYRO_CHANNELS),
    ChannelKind.ACCEL: (PRESSURE_CHANNELS + GYRO_CHANNELS, ACCEL_CHANNELS),
}


@dataclass(frozen=True)
class Channel:
    kind: ChannelKind
    index: int


class JointId(enum.IntEnum):
    HIPS = 0
    AB = 1
    CHEST = 2
    NECK = 3
    HEAD = 4
    L_SHOULDER = 5
    L_UARM = 6
    L_FARM = 7
    L_HAND = 8
    R_SHOULDER = 9
    R_UARM = 10
    R_FARM = 11
    R_HAND = 12
    L_THIGH = 13
    L_SHIN = 14
    L_FOOT = 15
    L_TOE = 16
    R_THIGH = 17
    R_SHIN = 18
    R_FOOT = 19
    R_TOE = 20

    @property
    def export_name(self) -> str:
        return JOINT_NAMES[self.value]


JOINT_NAMES = (
    "Hips",
    "Ab",
    "Chest",
    "Neck",
    "Head",
    "LShoulder",
    "LUArm",
    "LFArm",
    "LHand",
    "RShoulder",
    "RUArm",
    "RFArm",
    "RHand",
    "LThigh",
    "LShin",
    "LFoot",
    "LToe",
    "RThigh",
    "RShin",
    "RFoot",
    "RToe",
)


class BodyPart(enum.Enum):
    HEAD = "Head"
    SPINE = "Spine"
    ARMS = "Arms"
    LEGS = "Legs"


_PART_MEMBERS: Dict[BodyPart, Tuple[JointId, ...]] = {
    BodyPart.HEAD: (JointId.NECK, JointId.HEAD),
    BodyPart.SPINE: (JointId.HIPS, JointId.AB, JointId.CHEST),
    BodyPart.ARMS: (
        JointId.L_SHOULDER,
        JointId.L_UARM,
        JointId.L_FARM,
        JointId.L_HAND,
        JointId.R_SHOULDER,
        JointId.R_UARM,
        JointId.R_FARM,
        JointId.R_HAND,
    ),
    BodyPart.LEGS: (
        JointId.L_THIGH,
        JointId.L_SHIN,
        JointId.L_FOOT,
        JointId.L_TOE,
        JointId.R_THIGH,
        JointId.R_SHIN,
        JointId.R_FOOT,
        JointId.R_TOE,
    ),
}


class TaskLabel(enum.Enum):
    TILT_LEFT_RIGHT = "TiltLeftRight"
    BOW = "Bow"
    SQUAT = "Squat"
    STAND_AND_SIT = "StandAndSit"
    ONE_LEG_STAND = "OneLegStand"
    WALK = "Walk"
    JUMP = "Jump"
    ONE_LEG_HOP = "OneLegHop"
    FREE = "Free"
    UNKNOWN = "Unknown"

    @property
    def display_name(self) -> str:
        return TASK_DISPLAY_NAMES[self]


# Report columns follow the error-summary table: Stand, Tilt, Bow, Stand and Sit, Squat first.
TASK_DISPLAY_NAMES: Dict[TaskLabel, str] = {
    TaskLabel.ONE_LEG_STAND: "Stand",
    TaskLabel.TILT_LEFT_RIGHT: "Tilt",
    TaskLabel.BOW: "Bow",
    TaskLabel.STAND_AND_SIT: "Stand and Sit",
    TaskLabel.SQUAT: "Squat",
    TaskLabel.WALK: "Walk",
    TaskLabel.JUMP: "Jump",
    TaskLabel.ONE_LEG_HOP: "One-Leg Hop",
    TaskLabel.FREE: "Free",
    TaskLabel.UNKNOWN: "Unknown",
}
TASK_REPORT_ORDER: Tuple[TaskLabel, ...] = tuple(TASK_DISPLAY_NAMES)


def task_from_display_name(name: str) -> TaskLabel:
    for task, display in TASK_DISPLAY_NAMES.items():
        if display == name or task.value == name:
            return task
    raise ParameterError(f"Unknown task name: {name!r}")


def frame_layout_index(side: FootSide, channel: Channel) -> int:
    """Flat index of a per-foot channel inside the 82-wide sensor frame."""
    offset, count = _KIND_OFFSETS[channel.kind]
    if not 0 <= channel.index < count:
        raise LayoutError(
            f"{channel.kind.value} index {channel.index} outside 0..{count - 1}"
        )
    base = 0 if side is FootSide.LEFT else FOOT_WIDTH
    return base + offset + channel.index


def foot_channels() -> List[Channel]:
    channels: List[Channel] = []
    for kind, (_, count) in _KIND_OFFSETS.items():
        channels.extend(Channel(kind, idx) for idx in range(count))
    return channels


def channel_name(side: FootSide, channel: Channel) -> str:
    if channel.kind is ChannelKind.PRESSURE:
        return f"{side.value}.p{channel.index:02d}"
    prefix = "g" if channel.kind is ChannelKind.GYRO else "a"
    return f"{side.value}.{prefix}{AXES[channel.index]}"


def channel_names() -> List[str]:
    names = [""] * FRAME_WIDTH
    for side in FootSide:
        for channel in foot_channels():
            names[frame_layout_index(side, channel)] = channel_name(side, channel)
    return names


def channel_mask(kinds: Sequence[ChannelKind]) -> np.ndarray:
    mask = np.zeros(FRAME_WIDTH, dtype=bool)
    for side in FootSide:
        for channel in foot_channels():
            if channel.kind in kinds:
                mask[frame_layout_index(side, channel)] = True
    return mask


def joints_of(part: BodyPart) -> List[JointId]:
    return list(_PART_MEMBERS[part])


def part_of(joint: JointId) -> BodyPart:
    for part, members in _PART_MEMBERS.items():
        if joint in members:
            return part
    raise LayoutError(f"Joint {joint!r} has no body part")


def mocap_columns() -> List[str]:
    return [f"{name}.{axis}" for name in JOINT_NAMES for axis in AXES]


@dataclass(frozen=True)
class FootChannels:
    pressure: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self) -> None:
        for name, expected in (
            ("pressure", PRESSURE_CHANNELS),
            ("gyro", GYRO_CHANNELS),
            ("accel", ACCEL_CHANNELS),
        ):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != (expected,):
                raise LayoutError(f"{name} must have {expected} values, got {value.shape}")
            object.__setattr__(self, name, value)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pressure, self.gyro, self.accel])

    @classmethod
    def from_vector(cls, values: np.ndarray) -> FootChannels:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (FOOT_WIDTH,):
            raise LayoutError(f"Foot vector must have {FOOT_WIDTH} values, got {values.shape}")
        gyro_at = PRESSURE_CHANNELS
        accel_at = PRESSURE_CHANNELS + GYRO_CHANNELS
        return cls(values[:gyro_at], values[gyro_at:accel_at], values[accel_at:])


@dataclass(frozen=True)
class SensorFrame:
    timestamp: float
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (FRAME_WIDTH,):
            raise LayoutError(f"Sensor frame must have {FRAME_WIDTH} values, got {values.shape}")
        if self.timestamp < 0:
            raise ContractError(f"Negative timestamp {self.timestamp}")
        object.__setattr__(self, "values", values)

    @classmethod
    def pack(cls, timestamp: float, left: FootChannels, right: FootChannels) -> SensorFrame:
        return cls(timestamp, np.concatenate([left.as_vector(), right.as_vector()]))

    def unpack(self) -> Tuple[FootChannels, FootChannels]:
        return (
            FootChannels.from_vector(self.values[:FOOT_WIDTH]),
            FootChannels.from_vector(self.values[FOOT_WIDTH:]),
        )


@dataclass(frozen=True)
class SkeletonFrame:
    timestamp: float
    joints: np.ndarray

    def __post_init__(self) -> None:
        joints = np.asarray(self.joints, dtype=np.float64).reshape(-1)
        if joints.shape != (SKELETON_WIDTH,):
            raise LayoutError(f"Skeleton frame must have {SKELETON_WIDTH} scalars")
        if not np.all(np.isfinite(joints)):
            raise DataError("Skeleton frame coordinates must be finite")
        object.__setattr__(self, "joints", joints.reshape(JOINT_COUNT, 3))

    def joint(self, joint: JointId) -> np.ndarray:
        return self.joints[joint.value]


def _frozen_array(values: np.ndarray, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise ShapeError(f"Expected a {ndim}-d array, got shape {array.shape}")
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Series:
    """Timestamped rows of equal width. Arrays are copied and frozen on construction."""

    timestamps: np.ndarray
    values: np.ndarray
    subject: str = "S00"
    task: TaskLabel = TaskLabel.UNKNOWN
    sample_rate_hz: float = 0.0
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        timestamps = _frozen_array(self.timestamps, 1)
        values = _frozen_array(self.values, 2)
        if values.shape[0] != timestamps.shape[0]:
            raise ShapeError(
                f"{timestamps.shape[0]} timestamps but {values.shape[0]} rows of values"
            )
        if timestamps.size and timestamps[0] < 0:
            raise ContractError(f"Negative timestamp {timestamps[0]}")
        if timestamps.size > 1 and not np.all(np.diff(timestamps) > 0):
            raise ContractError("Timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def span(self) -> Tuple[float, float]:
        if not len(self):
            raise DataError("Empty series has no time span")
        return float(self.timestamps[0]), float(self.timestamps[-1])

    def replace(
        self, timestamps: np.ndarray | None = None, values: np.ndarray | None = None, **meta
    ):
        kwargs = {
            "timestamps": self.timestamps if timestamps is None else timestamps,
            "values": self.values if values is None else values,
            "subject": self.subject,
            "task": self.task,
            "sample_rate_hz": self.sample_rate_hz,
            "meta": dict(self.meta),
        }
        kwargs.update(meta)
        return type(self)(**kwargs)

    def slice(self, start: int, stop: int):
        return self.replace(self.timestamps[start:stop], self.values[start:stop])


@dataclass(frozen=True)
class SensorSeries(Series):
    def frames(self) -> Iterator[SensorFrame]:
        if self.width != FRAME_WIDTH:
            raise LayoutError(f"Only {FRAME_WIDTH}-wide series yield sensor frames")
        for timestamp, row in zip(self.timestamps, self.values, strict=True):
            yield SensorFrame(float(timestamp), row)


@dataclass(frozen=True)
class SkeletonSeries(Series):
    def __post_init__(self) -> None:
        super().__post_init__()
        if self.width != SKELETON_WIDTH:
            raise LayoutError(f"Skeleton series must be {SKELETON_WIDTH} wide, got {self.width}")

    @property
    def joints(self) -> np.ndarray:
        return self.values.reshape(len(self), JOINT_COUNT, 3)

    def frames(self) -> Iterator[SkeletonFrame]:
        for timestamp, row in zip(self.timestamps, self.values, strict=True):
            yield SkeletonFrame(float(timestamp), row)


def to_root_relative(series: SkeletonSeries) -> SkeletonSeries:
    joints = series.joints
    relative = joints - joints[:, JointId.HIPS.value : JointId.HIPS.value + 1, :]
    return series.replace(values=relative.reshape(len(series), SKELETON_WIDTH))
