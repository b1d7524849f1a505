"""Per-joint Euclidean errors and the task / body-part / joint summary tables."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel, Field

from core import (
    JOINT_COUNT,
    JOINT_NAMES,
    TASK_REPORT_ORDER,
    AlignmentError,
    BodyPart,
    DataError,
    JointId,
    ParameterError,
    ReportError,
    SkeletonSeries,
    TaskLabel,
    joints_of,
    task_from_display_name,
)

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).resolve().parent / "templates"
TASK_ROWS = ("RMSE", "Median_error", "Std. Dev. Error")
PART_COLUMNS = ("Part", "Task", "Median Error", "Std. Dev. Error")
SPLIT_NOTE = "chronological 8:2 split inside each single-task recording"


class ErrorStats(BaseModel):
    rmse: float
    median: float
    std: float
    mean: float = 0.0
    frames: int = 0


class ErrorReport(BaseModel):
    """Everything eval writes; every number is recomputable from the error matrix."""

    tasks: Dict[str, ErrorStats] = Field(default_factory=dict)
    parts: Dict[str, Dict[str, ErrorStats]] = Field(default_factory=dict)
    part_averages: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    joints: Dict[str, ErrorStats] = Field(default_factory=dict)
    overall_rmse: float = 0.0
    baseline_rmse: float | None = None
    split: str = SPLIT_NOTE
    meta: Dict[str, object] = Field(default_factory=dict)

    def task_rmse(self) -> Dict[str, float]:
        return {name: stats.rmse for name, stats in self.tasks.items()}


def joint_errors(pred: SkeletonSeries, truth: SkeletonSeries) -> np.ndarray:
    """frames x 21 matrix of Euclidean distances (mm)."""
    if len(pred) != len(truth) or not np.array_equal(pred.timestamps, truth.timestamps):
        raise AlignmentError("Prediction and ground truth must share timestamps")
    return np.linalg.norm(pred.joints - truth.joints, axis=2)


def _select(
    errors: np.ndarray,
    joints: Sequence[JointId] | None = None,
    frames: np.ndarray | slice | None = None,
) -> np.ndarray:
    if errors.ndim != 2 or errors.shape[1] != JOINT_COUNT:
        raise ParameterError(f"Error matrix must be frames x {JOINT_COUNT}")
    picked = errors if frames is None else errors[frames]
    if joints is not None:
        picked = picked[:, [int(j) for j in joints]]
    if picked.size == 0:
        raise ParameterError("Empty error selection")
    return picked


def rmse(
    errors: np.ndarray,
    joints: Sequence[JointId] | None = None,
    frames: np.ndarray | slice | None = None,
) -> float:
    """Square root of the mean squared distance over all selected (frame, joint) pairs."""
    picked = _select(errors, joints, frames)
    return float(np.sqrt(np.mean(picked**2)))


def median_std(
    errors: np.ndarray,
    joints: Sequence[JointId] | None = None,
    frames: np.ndarray | slice | None = None,
) -> Tuple[float, float]:
    """Median (midpoint of the two middle values for even counts) and population std."""
    picked = _select(errors, joints, frames)
    return float(np.median(picked)), float(np.std(picked))


def _stats(errors: np.ndarray, joints=None, frames=None) -> ErrorStats:
    picked = _select(errors, joints, frames)
    median, std = float(np.median(picked)), float(np.std(picked))
    return ErrorStats(
        rmse=float(np.sqrt(np.mean(picked**2))),
        median=median,
        std=std,
        mean=float(np.mean(picked)),
        frames=int(picked.shape[0]),
    )


def _task_masks(tasks: Sequence[TaskLabel], frames: int) -> Dict[TaskLabel, np.ndarray]:
    if len(tasks) != frames:
        raise ParameterError(f"{len(tasks)} task labels for {frames} frames")
    labels = np.array([task.value for task in tasks])
    masks = {task: labels == task.value for task in TASK_REPORT_ORDER}
    return {task: mask for task, mask in masks.items() if mask.any()}


def per_task_report(errors: np.ndarray, tasks: Sequence[TaskLabel]) -> Dict[str, ErrorStats]:
    """One column per task present, in table order."""
    if errors.shape[0] == 0 or not tasks:
        raise DataError("No labelled frames to report on")
    return {
        task.display_name: _stats(errors, frames=mask)
        for task, mask in _task_masks(tasks, errors.shape[0]).items()
    }


def per_part_report(
    errors: np.ndarray, tasks: Sequence[TaskLabel] | None = None
) -> Tuple[Dict[str, Dict[str, ErrorStats]], Dict[str, Dict[str, float]]]:
    """Median/std (and RMSE) per body part per task, plus the unweighted per-part average
    over tasks."""
    if errors.shape[0] == 0:
        raise DataError("No frames to report on")
    labels = list(tasks) if tasks is not None else [TaskLabel.UNKNOWN] * errors.shape[0]
    masks = _task_masks(labels, errors.shape[0])
    parts: Dict[str, Dict[str, ErrorStats]] = {}
    averages: Dict[str, Dict[str, float]] = {}
    for part in BodyPart:
        members = joints_of(part)
        rows = {
            task.display_name: _stats(errors, joints=members, frames=mask)
            for task, mask in masks.items()
        }
        parts[part.value] = rows
        averages[part.value] = {
            "median": float(np.mean([row.median for row in rows.values()])),
            "std": float(np.mean([row.std for row in rows.values()])),
            "rmse": float(np.mean([row.rmse for row in rows.values()])),
        }
    return parts, averages


def per_joint_report(errors: np.ndarray) -> Dict[str, ErrorStats]:
    return {JOINT_NAMES[j]: _stats(errors, joints=[JointId(j)]) for j in range(JOINT_COUNT)}


def mean_pose_baseline(train_targets: np.ndarray, truth: SkeletonSeries) -> SkeletonSeries:
    """Predict the training-mean skeleton for every frame."""
    mean_pose = np.asarray(train_targets, dtype=np.float64).reshape(-1, truth.width).mean(axis=0)
    return truth.replace(values=np.tile(mean_pose, (len(truth), 1)))


def build_report(
    errors: np.ndarray,
    tasks: Sequence[TaskLabel],
    baseline_errors: np.ndarray | None = None,
    meta: Dict[str, object] | None = None,
) -> ErrorReport:
    parts, averages = per_part_report(errors, tasks)
    return ErrorReport(
        tasks=per_task_report(errors, tasks),
        parts=parts,
        part_averages=averages,
        joints=per_joint_report(errors),
        overall_rmse=rmse(errors),
        baseline_rmse=rmse(baseline_errors) if baseline_errors is not None else None,
        meta=meta or {},
    )


def task_table(report: ErrorReport) -> pd.DataFrame:
    """Rows RMSE / Median_error / Std. Dev. Error, one column per task, 1 decimal."""
    table: Dict[str, List[str]] = {"": list(TASK_ROWS)}
    for name, stats in report.tasks.items():
        table[name] = [f"{stats.rmse:.1f}", f"{stats.median:.1f}", f"{stats.std:.1f}"]
    return pd.DataFrame(table)


def part_table(report: ErrorReport) -> pd.DataFrame:
    rows: List[List[str]] = []
    for part, by_task in report.parts.items():
        for task, stats in by_task.items():
            rows.append([part, task, f"{stats.median:.1f}", f"{stats.std:.1f}"])
        average = report.part_averages[part]
        rows.append([part, "Average", f"{average['median']:.1f}", f"{average['std']:.1f}"])
    return pd.DataFrame(rows, columns=list(PART_COLUMNS))


def joint_table(report: ErrorReport) -> pd.DataFrame:
    rows = [
        [name, f"{s.rmse:.1f}", f"{s.mean:.1f}", f"{s.median:.1f}", f"{s.std:.1f}"]
        for name, s in report.joints.items()
    ]
    columns = ["Joint", "RMSE", "Mean Error", "Median Error", "Std. Dev. Error"]
    return pd.DataFrame(rows, columns=columns)


def write_report(
    report: ErrorReport,
    out_dir: Path,
    errors: np.ndarray | None = None,
    tasks: Sequence[TaskLabel] | None = None,
) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [
        _write_csv(task_table(report), out_dir / "per_task.csv"),
        _write_csv(part_table(report), out_dir / "per_part.csv"),
        _write_csv(joint_table(report), out_dir / "per_joint.csv"),
    ]
    json_path = out_dir / "report.json"
    json_path.write_text(
        json.dumps(report.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(json_path)
    chart = render_bar_chart(
        "RMSE per task", list(report.tasks), {"RMSE": list(report.task_rmse().values())}
    )
    chart_path = out_dir / "per_task.svg"
    chart_path.write_text(chart, encoding="utf-8")
    written.append(chart_path)
    if errors is not None:
        frame = pd.DataFrame(errors, columns=list(JOINT_NAMES))
        if tasks is not None:
            frame.insert(0, "task", [task.value for task in tasks])
        written.append(_write_csv(frame, out_dir / "joint_errors.csv", float_format="%.17g"))
    logger.info("Wrote %d report files to %s", len(written), out_dir)
    return written


def _write_csv(frame: pd.DataFrame, path: Path, float_format: str | None = None) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n", float_format=float_format)
    return path


class Comparison(BaseModel):
    label_a: str
    label_b: str
    tasks: List[str]
    rmse_a: List[float]
    rmse_b: List[float]
    delta: List[float]
    relative: List[float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "Task": self.tasks,
                f"RMSE {self.label_a}": self.rmse_a,
                f"RMSE {self.label_b}": self.rmse_b,
                "Delta": self.delta,
                "Delta %": [100.0 * r for r in self.relative],
            }
        )


def _as_task_rmse(report: ErrorReport | Mapping[str, float]) -> Dict[str, float]:
    return report.task_rmse() if isinstance(report, ErrorReport) else dict(report)


def ablation_compare(
    report_a: ErrorReport | Mapping[str, float],
    report_b: ErrorReport | Mapping[str, float],
    label_a: str = "with derivatives",
    label_b: str = "without derivatives",
) -> Comparison:
    """Side-by-side per-task RMSE with signed deltas (b - a) and deltas relative to a."""
    a = _as_task_rmse(report_a)
    b = _as_task_rmse(report_b)
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))
        only_b = sorted(set(b) - set(a))
        raise ReportError(
            f"Task sets differ: only in {label_a}: {only_a}; only in {label_b}: {only_b}"
        )
    order = sorted(a, key=lambda name: TASK_REPORT_ORDER.index(task_from_display_name(name)))
    delta = [b[name] - a[name] for name in order]
    relative = [d / a[name] if a[name] else 0.0 for d, name in zip(delta, order, strict=True)]
    return Comparison(
        label_a=label_a,
        label_b=label_b,
        tasks=order,
        rmse_a=[a[name] for name in order],
        rmse_b=[b[name] for name in order],
        delta=delta,
        relative=relative,
    )


def write_comparison(comparison: Comparison, out_dir: Path, stem: str = "ablation") -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = _write_csv(comparison.to_frame(), out_dir / f"{stem}.csv", float_format="%.6g")
    svg_path = out_dir / f"{stem}.svg"
    svg_path.write_text(
        render_bar_chart(
            "RMSE per task",
            comparison.tasks,
            {comparison.label_a: comparison.rmse_a, comparison.label_b: comparison.rmse_b},
        ),
        encoding="utf-8",
    )
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(
        json.dumps(comparison.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return [csv_path, svg_path, json_path]


def load_baseline_table(path: Path) -> Dict[str, float]:
    """Per-task RMSE from an external CSV with `Task,RMSE` columns."""
    frame = pd.read_csv(path)
    if not {"Task", "RMSE"} <= set(frame.columns):
        raise ReportError(f"{path.name} needs Task and RMSE columns")
    table = {}
    for task, value in zip(frame["Task"], frame["RMSE"], strict=True):
        table[task_from_display_name(str(task)).display_name] = float(value)
    return table


_PALETTE = ("#4C72B0", "#DD8452", "#55A868", "#C44E52")


def render_bar_chart(
    title: str, categories: Sequence[str], series: Mapping[str, Sequence[float]], unit: str = "mm"
) -> str:
    width, height = 640, 360
    left, right, top, bottom = 60, 20, 40, 60
    plot_w = width - left - right
    plot_h = height - top - bottom
    peak = max([max(values) for values in series.values() if len(values)] + [1e-9])
    group_w = plot_w / max(len(categories), 1)
    bar_w = group_w * 0.8 / max(len(series), 1)

    bars = []
    for s_idx, (label, values) in enumerate(series.items()):
        for c_idx, value in enumerate(values):
            bar_h = plot_h * value / peak
            bars.append(
                {
                    "x": round(left + c_idx * group_w + group_w * 0.1 + s_idx * bar_w, 2),
                    "y": round(top + plot_h - bar_h, 2),
                    "width": round(bar_w, 2),
                    "height": round(bar_h, 2),
                    "color": _PALETTE[s_idx % len(_PALETTE)],
                    "label": f"{label}: {value:.1f} {unit}",
                }
            )
    labels = [
        {"x": round(left + (idx + 0.5) * group_w, 2), "text": name}
        for idx, name in enumerate(categories)
    ]
    legend = [
        {"y": top + 14 * idx, "color": _PALETTE[idx % len(_PALETTE)], "text": label}
        for idx, label in enumerate(series)
    ]
    ticks = [
        {"y": round(top + plot_h - plot_h * frac, 2), "text": f"{peak * frac:.0f}"}
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0)
    ]
    environment = Environment(loader=FileSystemLoader(str(TEMPLATES_DIR)), autoescape=True)
    return environment.get_template("bar_chart.svg.j2").render(
        title=title,
        unit=unit,
        width=width,
        height=height,
        left=left,
        top=top,
        plot_w=plot_w,
        plot_h=plot_h,
        bars=bars,
        labels=labels,
        legend=legend,
        ticks=ticks,
        label_y=top + plot_h + 18,
    )
