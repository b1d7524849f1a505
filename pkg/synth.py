"""Deterministic synthetic recordings: parametric motion templates, a plantar-pressure
forward model over the taxel layout, ankle IMU simulation and CSV emission.

The generator validates software, not physiology. Loads are quasi-static: each foot
carries `body_weight * fraction`, spread over its taxels by a Gaussian kernel centred
on a centre of pressure derived from the body's mean joint position.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from connectors.insole import (
    AmplifierParams,
    InsoleConnector,
    amplifier_gain,
    sensor_voltage_to_count,
)
from connectors.mocap import write_mocap_csv
from core import (
    JOINT_COUNT,
    PRESSURE_CHANNELS,
    SKELETON_WIDTH,
    ContractError,
    DataError,
    EmissionError,
    FootSide,
    JointId,
    LayoutError,
    ParameterError,
    SkeletonFrame,
    SkeletonSeries,
    TaskLabel,
)
from numerics import RngStream
from preprocess import TaskSegment, derivative_values

logger = logging.getLogger(__name__)

LAYOUT_PATH = Path(__file__).resolve().parent / "data" / "taxel_layout.csv"
GRAVITY = 9.81
KERNEL_SIGMA = 0.15
FOOT_LENGTH_MM = 250.0
HEEL_OFFSET_MM = 100.0
LATERAL_COP_RANGE = 0.15

THIGH_MM = 420.0
SHIN_MM = 400.0
ANKLE_HEIGHT_MM = 80.0
HIP_HALF_WIDTH_MM = 90.0
HIP_DROP_MM = 50.0
HIP_HEIGHT_MM = ANKLE_HEIGHT_MM + 0.99 * (THIGH_MM + SHIN_MM) + HIP_DROP_MM
TOE_OFFSET = np.array([0.0, -60.0, 150.0])

LEFT_FILE = "left_insole.csv"
RIGHT_FILE = "right_insole.csv"
MOCAP_FILE = "mocap.csv"
MANIFEST_FILE = "manifest.json"

RECORDED_TASKS = (
    TaskLabel.ONE_LEG_STAND,
    TaskLabel.TILT_LEFT_RIGHT,
    TaskLabel.BOW,
    TaskLabel.STAND_AND_SIT,
    TaskLabel.SQUAT,
    TaskLabel.WALK,
    TaskLabel.JUMP,
    TaskLabel.ONE_LEG_HOP,
)

_MIRROR_ORDER: List[int] = []
for _joint in JointId:
    _name = _joint.name
    if _name.startswith("L_"):
        _name = "R_" + _name[2:]
    elif _name.startswith("R_"):
        _name = "L_" + _name[2:]
    _MIRROR_ORDER.append(JointId[_name].value)


class TaxelLayout:
    """35 taxel positions in normalized foot coordinates: heel (0, 0) to toe (0, 1),
    x positive towards the subject's left. The right foot uses the mirrored x."""

    def __init__(self, names: List[str], positions: np.ndarray) -> None:
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != (PRESSURE_CHANNELS, 2) or len(names) != PRESSURE_CHANNELS:
            raise LayoutError(f"Taxel layout needs exactly {PRESSURE_CHANNELS} positions")
        if not np.all(np.isfinite(positions)):
            raise LayoutError("Taxel positions must be finite")
        outside = (positions[:, 1] < 0) | (positions[:, 1] > 1) | (np.abs(positions[:, 0]) > 0.5)
        if outside.any():
            raise LayoutError(f"Taxel {names[int(np.argmax(outside))]} lies outside the foot")
        if pdist(positions).min() <= 0:
            raise LayoutError("Taxel positions must be distinct")
        self.names = list(names)
        self._positions = positions
        self._positions.flags.writeable = False

    def positions(self, side: FootSide = FootSide.LEFT) -> np.ndarray:
        if side is FootSide.LEFT:
            return self._positions
        return self._positions * np.array([-1.0, 1.0])


def load_layout(path: Path | None = None) -> TaxelLayout:
    path = Path(path) if path is not None else LAYOUT_PATH
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise LayoutError(f"Cannot read taxel layout {path}: {exc}") from exc
    if list(frame.columns) != ["taxel", "x", "y"]:
        raise LayoutError(f"{path.name}: expected columns taxel,x,y")
    return TaxelLayout(
        [str(name) for name in frame["taxel"]], frame[["x", "y"]].to_numpy(dtype=np.float64)
    )


@dataclass
class Kinematics:
    """Driving signals for one template evaluation; index 0 is the left side."""

    hips: np.ndarray
    pelvis: np.ndarray
    trunk: np.ndarray
    head: np.ndarray
    shoulders: np.ndarray
    elbows: np.ndarray
    ankles: np.ndarray
    foot_pitch: np.ndarray
    loads: np.ndarray

    @classmethod
    def rest(cls, frames: int) -> Kinematics:
        ankles = np.zeros((2, frames, 3))
        ankles[0, :, 0] = HIP_HALF_WIDTH_MM
        ankles[1, :, 0] = -HIP_HALF_WIDTH_MM
        ankles[:, :, 1] = ANKLE_HEIGHT_MM
        elbows = np.zeros((2, frames, 3))
        elbows[:, :, 0] = -0.15
        return cls(
            hips=np.tile([0.0, HIP_HEIGHT_MM, 0.0], (frames, 1)),
            pelvis=np.zeros((frames, 3)),
            trunk=np.zeros((frames, 3)),
            head=np.zeros((frames, 3)),
            shoulders=np.zeros((2, frames, 3)),
            elbows=elbows,
            ankles=ankles,
            foot_pitch=np.zeros((2, frames)),
            loads=np.full((frames, 2), 0.5),
        )


Motion = Callable[[np.ndarray, "MotionTemplate"], Kinematics]


def _cycle(t: np.ndarray, period: float) -> np.ndarray:
    return (1.0 - np.cos(2.0 * np.pi * t / period)) / 2.0


def _ease(u: np.ndarray) -> np.ndarray:
    return (1.0 - np.cos(np.pi * np.clip(u, 0.0, 1.0))) / 2.0


def _lift_left_leg(k: Kinematics, lift_mm: float) -> None:
    k.hips[:, 0] -= 70.0
    k.trunk[:, 2] += math.radians(3.0)
    k.ankles[0, :, 1] += lift_mm
    k.ankles[0, :, 2] += 60.0
    k.foot_pitch[0] = 0.25
    k.shoulders[0, :, 2] = math.radians(30.0)
    k.shoulders[1, :, 2] = -math.radians(30.0)
    k.loads[:] = [0.0, 1.0]


def _flight(phase: np.ndarray, start: float, stop: float, height: float) -> np.ndarray:
    u = (phase - start) / (stop - start)
    airborne = (u > 0) & (u < 1)
    return np.where(airborne, 4.0 * height * u * (1.0 - u), 0.0)


def _one_leg_stand(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    _lift_left_leg(k, template.amplitude)
    return k


def _tilt(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    s = np.sin(2.0 * np.pi * t / template.period_s)
    k.trunk[:, 2] = -math.radians(template.amplitude) * s
    k.hips[:, 0] += 60.0 * s
    k.loads[:, 0] = 0.5 + 0.4 * s
    k.loads[:, 1] = 1.0 - k.loads[:, 0]
    return k


def _bow(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    b = _cycle(t, template.period_s)
    k.trunk[:, 0] = math.radians(template.amplitude) * b
    k.head[:, 0] = 0.2 * math.radians(template.amplitude) * b
    k.hips[:, 2] -= 60.0 * b
    return k


def _squat(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    b = _cycle(t, template.period_s)
    k.hips[:, 1] -= template.amplitude * b
    k.hips[:, 2] -= 0.4 * template.amplitude * b
    k.trunk[:, 0] = math.radians(25.0) * b
    k.shoulders[:, :, 0] = -math.radians(70.0) * b
    return k


def _stand_and_sit(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    phase = np.mod(t / template.period_s, 1.0)
    depth = np.where(phase < 0.5, _ease(phase / 0.3), 1.0 - _ease((phase - 0.5) / 0.3))
    k.hips[:, 1] -= template.amplitude * depth
    k.hips[:, 2] -= 0.6 * template.amplitude * depth
    k.trunk[:, 0] = math.radians(35.0) * np.sin(np.pi * depth)
    return k


def _walk(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    phase = np.mod(t / template.period_s, 1.0)
    stride = template.amplitude
    for side, shift in ((0, 0.0), (1, 0.5)):
        local = np.mod(phase - shift, 1.0)
        swing = local < 0.4
        u = local / 0.4
        k.ankles[side, :, 2] = np.where(
            swing, -stride / 2.0 * np.cos(np.pi * u), stride / 2.0 - stride * (local - 0.4) / 0.6
        )
        k.ankles[side, :, 1] += np.where(swing, 60.0 * np.sin(np.pi * u), 0.0)
        k.foot_pitch[side] = np.where(swing, 0.2 * np.sin(np.pi * u), 0.0)
    left = np.select(
        [phase < 0.4, phase < 0.5, phase < 0.9],
        [np.zeros_like(phase), (phase - 0.4) / 0.1, np.ones_like(phase)],
        1.0 - (phase - 0.9) / 0.1,
    )
    k.loads[:, 0] = left
    k.loads[:, 1] = 1.0 - left
    k.hips[:, 1] += -60.0 + 15.0 * np.cos(4.0 * np.pi * phase)
    k.hips[:, 0] += 25.0 * (2.0 * left - 1.0)
    k.pelvis[:, 1] = math.radians(5.0) * np.sin(2.0 * np.pi * phase)
    k.shoulders[0, :, 0] = math.radians(20.0) * np.sin(2.0 * np.pi * phase)
    k.shoulders[1, :, 0] = -k.shoulders[0, :, 0]
    return k


def _jump(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    phase = np.mod(t / template.period_s, 1.0)
    flight_s = 0.2 * template.period_s
    height = _flight(phase, 0.45, 0.65, GRAVITY * 1000.0 * flight_s**2 / 8.0)
    crouch = np.where(
        phase < 0.45,
        _cycle(phase, 0.45),
        np.where(phase >= 0.65, _cycle(phase - 0.65, 0.35), 0.0),
    )
    k.hips[:, 1] += height - template.amplitude * crouch
    k.hips[:, 2] -= 0.3 * template.amplitude * crouch
    k.ankles[:, :, 1] += height
    k.trunk[:, 0] = math.radians(20.0) * crouch
    k.shoulders[:, :, 0] = math.radians(40.0) * crouch
    k.foot_pitch[:] = 0.3 * (height > 0)
    k.loads[height > 0] = 0.0
    return k


def _one_leg_hop(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    _lift_left_leg(k, 150.0)
    phase = np.mod(t / template.period_s, 1.0)
    flight_s = 0.2 * template.period_s
    height = _flight(phase, 0.4, 0.6, GRAVITY * 1000.0 * flight_s**2 / 8.0)
    crouch = np.where(
        phase < 0.4, _cycle(phase, 0.4), np.where(phase >= 0.6, _cycle(phase - 0.6, 0.4), 0.0)
    )
    k.hips[:, 1] += height - template.amplitude * crouch
    k.ankles[:, :, 1] += height
    k.foot_pitch[1] = 0.3 * (height > 0)
    k.loads[height > 0] = 0.0
    return k


def _free(t: np.ndarray, template: MotionTemplate) -> Kinematics:
    k = Kinematics.rest(t.shape[0])
    scale = template.amplitude
    s = np.sin(2.0 * np.pi * t / 5.3)
    k.trunk[:, 2] = -math.radians(8.0) * scale * s
    k.hips[:, 0] += 30.0 * scale * s
    k.trunk[:, 0] = math.radians(15.0) * scale * _cycle(t, 7.1)
    k.hips[:, 1] -= 80.0 * scale * _cycle(t, 3.7)
    raise_arms = math.radians(40.0) * scale * _cycle(t, 4.3)
    k.shoulders[0, :, 2] = raise_arms
    k.shoulders[1, :, 2] = -raise_arms
    k.loads[:, 0] = 0.5 + 0.3 * s
    k.loads[:, 1] = 1.0 - k.loads[:, 0]
    return k


_MOTIONS: Dict[TaskLabel, Motion] = {
    TaskLabel.ONE_LEG_STAND: _one_leg_stand,
    TaskLabel.TILT_LEFT_RIGHT: _tilt,
    TaskLabel.BOW: _bow,
    TaskLabel.SQUAT: _squat,
    TaskLabel.STAND_AND_SIT: _stand_and_sit,
    TaskLabel.WALK: _walk,
    TaskLabel.JUMP: _jump,
    TaskLabel.ONE_LEG_HOP: _one_leg_hop,
    TaskLabel.FREE: _free,
}

# (period s, amplitude): lift mm, lean deg, bow deg, squat mm, sit mm, stride mm,
# crouch mm, crouch mm, blend scale.
_DEFAULTS: Dict[TaskLabel, Tuple[float, float]] = {
    TaskLabel.ONE_LEG_STAND: (10.0, 150.0),
    TaskLabel.TILT_LEFT_RIGHT: (4.0, 15.0),
    TaskLabel.BOW: (4.0, 35.0),
    TaskLabel.SQUAT: (4.0, 300.0),
    TaskLabel.STAND_AND_SIT: (6.0, 420.0),
    TaskLabel.WALK: (1.2, 500.0),
    TaskLabel.JUMP: (1.5, 150.0),
    TaskLabel.ONE_LEG_HOP: (0.8, 60.0),
    TaskLabel.FREE: (30.0, 1.0),
}


@dataclass(frozen=True)
class MotionTemplate:
    task: TaskLabel
    period_s: float
    amplitude: float
    sway_mm: float = 3.0
    mirror: bool = False

    def __post_init__(self) -> None:
        if self.task not in _MOTIONS:
            raise ParameterError(f"No motion template for task {self.task.value}")
        if self.period_s <= 0:
            raise ParameterError(f"Template period must be positive, got {self.period_s}")

    def kinematics(self, t: np.ndarray) -> Kinematics:
        return _MOTIONS[self.task](np.asarray(t, dtype=np.float64), self)

    def loads(self, t: np.ndarray) -> np.ndarray:
        """(frames, 2) left/right fractions of body weight."""
        loads = self.kinematics(t).loads
        return loads[:, ::-1].copy() if self.mirror else loads

    def mirrored(self) -> MotionTemplate:
        return MotionTemplate(
            self.task, self.period_s, self.amplitude, self.sway_mm, not self.mirror
        )


def template_for(task: TaskLabel, **overrides) -> MotionTemplate:
    if task not in _DEFAULTS:
        raise ParameterError(f"No motion template for task {task.value}")
    period, amplitude = _DEFAULTS[task]
    return MotionTemplate(
        **{"task": task, "period_s": period, "amplitude": amplitude, **overrides}
    )


def _two_link(
    root: np.ndarray, target: np.ndarray, upper: float, lower: float, pole: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Knee and reachable ankle for a hip at `root` aiming at `target`; the knee bends
    towards `pole`. Out-of-reach targets are pulled in along the hip-target line."""
    offset = target - root
    distance = np.linalg.norm(offset, axis=1)
    direction = offset / distance[:, None]
    reach = np.clip(distance, abs(upper - lower) + 1e-6, upper + lower - 1e-6)
    end = root + direction * reach[:, None]
    along = (upper**2 - lower**2 + reach**2) / (2.0 * reach)
    height = np.sqrt(np.maximum(upper**2 - along**2, 0.0))
    bend = pole - np.sum(pole * direction, axis=1)[:, None] * direction
    bend /= np.linalg.norm(bend, axis=1)[:, None]
    knee = root + direction * along[:, None] + bend * height[:, None]
    return knee, end


def _assemble(k: Kinematics) -> np.ndarray:
    """Forward kinematics: (frames, 21, 3) joint positions in mm."""
    frames = k.hips.shape[0]
    joints = np.zeros((frames, JOINT_COUNT, 3))
    pelvis = Rotation.from_rotvec(k.pelvis)
    trunk = pelvis * Rotation.from_rotvec(k.trunk)
    head = trunk * Rotation.from_rotvec(k.head)

    joints[:, JointId.HIPS] = k.hips
    joints[:, JointId.AB] = k.hips + trunk.apply([0.0, 100.0, 0.0])
    joints[:, JointId.CHEST] = joints[:, JointId.AB] + trunk.apply([0.0, 180.0, 0.0])
    joints[:, JointId.NECK] = joints[:, JointId.CHEST] + trunk.apply([0.0, 170.0, 0.0])
    joints[:, JointId.HEAD] = joints[:, JointId.NECK] + head.apply([0.0, 120.0, 0.0])

    arms = (
        (JointId.L_SHOULDER, JointId.L_UARM, JointId.L_FARM, JointId.L_HAND, 1.0),
        (JointId.R_SHOULDER, JointId.R_UARM, JointId.R_FARM, JointId.R_HAND, -1.0),
    )
    for side, (shoulder, upper, fore, hand, sx) in enumerate(arms):
        upper_rot = trunk * Rotation.from_rotvec(k.shoulders[side])
        fore_rot = upper_rot * Rotation.from_rotvec(k.elbows[side])
        joints[:, shoulder] = joints[:, JointId.CHEST] + trunk.apply([40.0 * sx, 150.0, 0.0])
        joints[:, upper] = joints[:, shoulder] + trunk.apply([130.0 * sx, 0.0, 0.0])
        joints[:, fore] = joints[:, upper] + upper_rot.apply([0.0, -290.0, 0.0])
        joints[:, hand] = joints[:, fore] + fore_rot.apply([0.0, -250.0, 0.0])

    forward = pelvis.apply([0.0, 0.0, 1.0])
    legs = (
        (JointId.L_THIGH, JointId.L_SHIN, JointId.L_FOOT, JointId.L_TOE, 1.0),
        (JointId.R_THIGH, JointId.R_SHIN, JointId.R_FOOT, JointId.R_TOE, -1.0),
    )
    for side, (hip, knee, ankle, toe, sx) in enumerate(legs):
        joints[:, hip] = k.hips + pelvis.apply([HIP_HALF_WIDTH_MM * sx, -HIP_DROP_MM, 0.0])
        joints[:, knee], joints[:, ankle] = _two_link(
            joints[:, hip], k.ankles[side], THIGH_MM, SHIN_MM, forward
        )
        pitch = np.zeros((frames, 3))
        pitch[:, 0] = k.foot_pitch[side]
        joints[:, toe] = joints[:, ankle] + Rotation.from_rotvec(pitch).apply(TOE_OFFSET)
    return joints


def _sway_phases(rng: RngStream) -> np.ndarray:
    return 2.0 * np.pi * rng.uniform((2,))


def _pose_at(template: MotionTemplate, t: np.ndarray, sway: np.ndarray) -> np.ndarray:
    k = template.kinematics(t)
    k.hips[:, 0] += template.sway_mm * np.sin(2.0 * np.pi * 0.21 * t + sway[0])
    k.hips[:, 2] += template.sway_mm * np.sin(2.0 * np.pi * 0.17 * t + sway[1])
    joints = _assemble(k)
    if template.mirror:
        joints = joints[:, _MIRROR_ORDER] * np.array([-1.0, 1.0, 1.0])
    return joints


def generate_skeleton(
    template: MotionTemplate, duration: float, rate: float, seed: int = 0
) -> SkeletonSeries:
    """Rigid 21-joint trajectory sampled at `rate` from t = 0; the seed fixes the sway."""
    if duration <= 0 or rate <= 0:
        raise ParameterError("duration and rate must be positive")
    t = np.arange(int(round(duration * rate))) / rate
    joints = _pose_at(template, t, _sway_phases(RngStream(seed)))
    return SkeletonSeries(
        t,
        joints.reshape(t.shape[0], SKELETON_WIDTH),
        task=template.task,
        sample_rate_hz=rate,
        meta={"template": template.task.value},
    )


def distribute_load(load: np.ndarray, cop: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Spread each frame's load over the taxels with an isotropic Gaussian kernel
    centred on `cop`; every row sums to its load."""
    load = np.asarray(load, dtype=np.float64)
    cop = np.atleast_2d(np.asarray(cop, dtype=np.float64))
    d2 = (positions[None, :, 0] - cop[:, None, 0]) ** 2 + (
        positions[None, :, 1] - cop[:, None, 1]
    ) ** 2
    kernel = np.exp(-d2 / (2.0 * KERNEL_SIGMA**2))
    return load.reshape(-1, 1) * kernel / kernel.sum(axis=1, keepdims=True)


def centre_of_pressure(joints: np.ndarray, side: FootSide) -> np.ndarray:
    """Per-frame CoP in normalized foot coordinates (x towards the subject's left)."""
    com = joints.mean(axis=1)
    ankle = joints[:, JointId.L_FOOT if side is FootSide.LEFT else JointId.R_FOOT]
    lateral = LATERAL_COP_RANGE * np.tanh((com[:, 0] - ankle[:, 0]) / FOOT_LENGTH_MM)
    forward = np.clip((com[:, 2] - ankle[:, 2] + HEEL_OFFSET_MM) / FOOT_LENGTH_MM, 0.1, 0.9)
    return np.column_stack([lateral, forward])


def foot_pressures(
    joints: np.ndarray, loads: np.ndarray, layout: TaxelLayout, body_weight: float
) -> np.ndarray:
    """(frames, 70) taxel loads in newtons, left foot first."""
    parts = [
        distribute_load(
            body_weight * loads[:, idx], centre_of_pressure(joints, side), layout.positions(side)
        )
        for idx, side in enumerate(FootSide)
    ]
    return np.hstack(parts)


def pressure_forward(
    frame: SkeletonFrame,
    template: MotionTemplate,
    t: float,
    layout: TaxelLayout,
    body_weight: float = 700.0,
) -> np.ndarray:
    """70 taxel loads for one skeleton frame at template time `t`."""
    loads = template.loads(np.array([t]))
    if np.any(loads < 0) or np.any(loads > 1):
        raise ParameterError(f"Load fractions out of range at t={t}")
    return foot_pressures(frame.joints[None], loads, layout, body_weight)[0]


def _shank_rotations(joints: np.ndarray, side: FootSide) -> Rotation:
    if side is FootSide.LEFT:
        shin, foot, toe = JointId.L_SHIN, JointId.L_FOOT, JointId.L_TOE
    else:
        shin, foot, toe = JointId.R_SHIN, JointId.R_FOOT, JointId.R_TOE
    up = joints[:, shin] - joints[:, foot]
    up /= np.linalg.norm(up, axis=1)[:, None]
    ahead = joints[:, toe] - joints[:, foot]
    ahead -= np.sum(ahead * up, axis=1)[:, None] * up
    ahead /= np.linalg.norm(ahead, axis=1)[:, None]
    across = np.cross(up, ahead)
    return Rotation.from_matrix(np.stack([across, up, ahead], axis=-1))


def imu_forward(
    series: SkeletonSeries,
    side: FootSide,
    gyro_noise: float = 0.0,
    accel_noise: float = 0.0,
    rng: RngStream | None = None,
) -> np.ndarray:
    """(frames, 6) gx gy gz [rad/s] and ax ay az [m/s^2] in the shank frame.

    Acceleration is the second central difference of the ankle position plus the
    gravity reaction; angular velocity comes from consecutive shank orientations.
    """
    if len(series) < 3:
        raise DataError("IMU simulation needs at least three skeleton frames")
    steps = np.diff(series.timestamps)
    dt = float(np.mean(steps))
    if not np.allclose(steps, dt, rtol=0, atol=1e-9):
        raise ContractError("IMU simulation needs a uniform skeleton rate")
    joints = series.joints
    rotations = _shank_rotations(joints, side)

    gyro = np.empty((len(series), 3))
    gyro[1:-1] = (rotations[:-2].inv() * rotations[2:]).as_rotvec() / (2.0 * dt)
    gyro[0] = (rotations[0].inv() * rotations[1]).as_rotvec() / dt
    gyro[-1] = (rotations[-2].inv() * rotations[-1]).as_rotvec() / dt

    ankle = joints[:, JointId.L_FOOT if side is FootSide.LEFT else JointId.R_FOOT] / 1000.0
    _, acceleration = derivative_values(ankle, dt)
    accel = rotations.inv().apply(acceleration + np.array([0.0, GRAVITY, 0.0]))

    if gyro_noise or accel_noise:
        if rng is None:
            raise ParameterError("IMU noise needs a random stream")
        gyro = gyro + rng.normal(gyro.shape, gyro_noise)
        accel = accel + rng.normal(accel.shape, accel_noise)
    return np.hstack([gyro, accel])


def voltage_to_adc(
    pressure, params: AmplifierParams, sensitivity: float = 0.02
) -> np.ndarray:
    """Taxel load [N] -> sensing-element voltage (saturating at the amplifier's input
    range) -> amplified, quantized and clamped ADC count."""
    load = np.asarray(pressure, dtype=np.float64)
    if np.any(load < 0):
        raise ParameterError("Pressure must be non-negative")
    ceiling = params.supply_volts / amplifier_gain(params)
    return sensor_voltage_to_count(np.minimum(load * sensitivity, ceiling), params)


class SynthConfig(BaseModel):
    tasks: List[str] = Field(default_factory=lambda: [task.value for task in RECORDED_TASKS])
    duration_s: float = 10.0
    seed: int = 0
    mocap_rate_hz: float = 120.0
    sensor_rate_hz: float = 100.0
    body_weight_n: float = 700.0
    sensitivity_v_per_n: float = 0.02
    pressure_noise_n: float = 0.2
    gyro_noise: float = 0.01
    accel_noise: float = 0.02
    mocap_noise_mm: float = 0.0
    dropout_prob: float = 0.001
    offsets: Dict[str, float] = Field(
        default_factory=lambda: {"mocap": 0.0, "left": 0.3, "right": 0.302}
    )
    amplifier: AmplifierParams = Field(default_factory=AmplifierParams)
    layout_path: str | None = None

    @field_validator("tasks")
    @classmethod
    def _known_tasks(cls, value: List[str]) -> List[str]:
        if not value:
            raise ParameterError("At least one task is required")
        for name in value:
            try:
                task = TaskLabel(name)
            except ValueError:
                task = TaskLabel.UNKNOWN
            if task not in _MOTIONS:
                raise ParameterError(f"No motion template for task {name!r}")
        return value

    @field_validator("dropout_prob")
    @classmethod
    def _probability(cls, value: float) -> float:
        if not 0 <= value < 1:
            raise ParameterError(f"dropout_prob must lie in [0, 1), got {value}")
        return value

    @model_validator(mode="after")
    def _check(self) -> SynthConfig:
        if self.mocap_rate_hz <= 0 or self.sensor_rate_hz <= 0:
            raise ParameterError("Sample rates must be positive")
        if self.duration_s < 2.0:
            raise ParameterError(f"duration_s must be at least 2 s, got {self.duration_s}")
        if set(self.offsets) != {"mocap", "left", "right"}:
            raise ParameterError("offsets must name exactly mocap, left and right")
        if any(value < 0 for value in self.offsets.values()):
            raise ParameterError("Stream offsets must be non-negative")
        for name in ("pressure_noise_n", "gyro_noise", "accel_noise", "mocap_noise_mm"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        return self

    @property
    def task_labels(self) -> List[TaskLabel]:
        return [TaskLabel(name) for name in self.tasks]

    @property
    def total_s(self) -> float:
        return self.duration_s * len(self.tasks)


class SegmentRecord(BaseModel):
    task: str
    start: float
    end: float
    mocap_rows: int


class EmissionManifest(BaseModel):
    files: Dict[str, str]
    seed: int
    rates: Dict[str, float]
    offsets: Dict[str, float]
    segments: List[SegmentRecord]
    body_weight_n: float
    dropout_prob: float
    amplifier: AmplifierParams

    def task_segments(self) -> List[TaskSegment]:
        return [
            TaskSegment(TaskLabel(seg.task), seg.start, seg.end) for seg in self.segments
        ]


def load_manifest(directory: Path) -> EmissionManifest:
    path = Path(directory) / MANIFEST_FILE
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise EmissionError(f"Cannot read {path}: {exc}") from exc
    return EmissionManifest.model_validate(payload)


@dataclass
class _Stream:
    timestamps: List[np.ndarray] = field(default_factory=list)
    values: List[np.ndarray] = field(default_factory=list)

    def stacked(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.concatenate(self.timestamps), np.vstack(self.values)


def _block_of(times: np.ndarray, config: SynthConfig) -> np.ndarray:
    return np.clip((times // config.duration_s).astype(int), 0, len(config.tasks) - 1)


def _drop_cells(values: np.ndarray, prob: float, rng: RngStream) -> np.ndarray:
    if prob <= 0:
        return values
    hit = rng.uniform(values.shape) < prob
    return np.where(hit, np.nan, values)


def emit_dataset(config: SynthConfig, out_dir: Path) -> EmissionManifest:
    """Write one continuous multi-task session: both insole files at the sensor rate,
    the mocap file at the mocap rate and a manifest with the task segments."""
    out_dir = Path(out_dir)
    layout = load_layout(Path(config.layout_path) if config.layout_path else None)
    root = RngStream(config.seed)
    templates = [template_for(task) for task in config.task_labels]
    sway = [_sway_phases(root.fork(10 + idx)) for idx in range(len(templates))]

    mocap_t = config.offsets["mocap"] + (
        np.arange(int(round(config.total_s * config.mocap_rate_hz))) / config.mocap_rate_hz
    )
    sensor_rows = int(round(config.total_s * config.sensor_rate_hz))
    streams = {"mocap": _Stream(), "left": _Stream(), "right": _Stream()}
    segments: List[SegmentRecord] = []

    for idx, template in enumerate(templates):
        start = config.offsets["mocap"] + idx * config.duration_s
        in_block = _block_of(mocap_t - config.offsets["mocap"], config) == idx
        joints = _pose_at(template, mocap_t[in_block] - start, sway[idx])
        values = joints.reshape(-1, SKELETON_WIDTH)
        if config.mocap_noise_mm:
            values = values + root.fork(100 + 10 * idx).normal(values.shape, config.mocap_noise_mm)
        present = np.ones((values.shape[0], JOINT_COUNT))
        joint_mask = _drop_cells(present, config.dropout_prob, root.fork(101 + 10 * idx))
        values = values * np.repeat(joint_mask, 3, axis=1)
        streams["mocap"].timestamps.append(mocap_t[in_block])
        streams["mocap"].values.append(values)
        segments.append(
            SegmentRecord(
                task=template.task.value,
                start=start,
                end=start + config.duration_s,
                mocap_rows=int(in_block.sum()),
            )
        )

        for side_idx, side in enumerate(FootSide):
            key = "left" if side is FootSide.LEFT else "right"
            times = config.offsets[key] + np.arange(sensor_rows) / config.sensor_rate_hz
            picked = times[_block_of(times - config.offsets["mocap"], config) == idx]
            if picked.shape[0] == 0:
                continue
            local = picked - start
            joints = _pose_at(template, local, sway[idx])
            skeleton = SkeletonSeries(picked, joints.reshape(-1, SKELETON_WIDTH))
            rng = root.fork(102 + 10 * idx + side_idx)
            both = foot_pressures(joints, template.loads(local), layout, config.body_weight_n)
            pressures = both[:, side_idx * PRESSURE_CHANNELS : (side_idx + 1) * PRESSURE_CHANNELS]
            if config.pressure_noise_n:
                noise = rng.normal(pressures.shape, config.pressure_noise_n)
                pressures = np.maximum(pressures + noise, 0.0)
            counts = voltage_to_adc(pressures, config.amplifier, config.sensitivity_v_per_n)
            imu = imu_forward(skeleton, side, config.gyro_noise, config.accel_noise, rng)
            cells = _drop_cells(np.hstack([counts, imu]), config.dropout_prob, rng)
            streams[key].timestamps.append(picked)
            streams[key].values.append(cells)

    files = {"left": LEFT_FILE, "right": RIGHT_FILE, "mocap": MOCAP_FILE}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        connector = InsoleConnector()
        for key in ("left", "right"):
            t, cells = streams[key].stacked()
            connector.export_counts(
                out_dir / files[key], t, cells[:, :PRESSURE_CHANNELS], cells[:, PRESSURE_CHANNELS:]
            )
        t, values = streams["mocap"].stacked()
        write_mocap_csv(out_dir / files["mocap"], SkeletonSeries(t, values))
        manifest = EmissionManifest(
            files=files,
            seed=config.seed,
            rates={"mocap": config.mocap_rate_hz, "sensor": config.sensor_rate_hz},
            offsets=dict(config.offsets),
            segments=segments,
            body_weight_n=config.body_weight_n,
            dropout_prob=config.dropout_prob,
            amplifier=config.amplifier,
        )
        (out_dir / MANIFEST_FILE).write_text(
            json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise EmissionError(f"Cannot write synthetic dataset to {out_dir}: {exc}") from exc

    logger.info(
        "Emitted %d tasks x %.1f s to %s (%d mocap rows)",
        len(templates),
        config.duration_s,
        out_dir,
        sum(seg.mocap_rows for seg in segments),
    )
    return manifest

