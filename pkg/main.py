import argparse
import contextlib
import hashlib
import json
import logging
import os
import subprocess
import sys
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from connectors.insole import AmplifierParams, read_imu_csv, read_insole_csv, substitute_imu
from connectors.mocap import read_mocap_csv, write_mocap_csv
from core import (
    FRAME_WIDTH,
    AlignmentError,
    CheckpointError,
    CompatibilityError,
    ContractError,
    DataError,
    EmissionError,
    FootSide,
    FormatError,
    GuardError,
    LayoutError,
    NumericError,
    ParameterError,
    ParseError,
    ReportError,
    SensorSeries,
    ShapeError,
    SkeletonSeries,
    TaskLabel,
)
from evaluate import (
    ErrorReport,
    ablation_compare,
    build_report,
    joint_errors,
    load_baseline_table,
    mean_pose_baseline,
    write_comparison,
    write_report,
)
from model import ModelConfig, load_weights, predict_series
from preprocess import (
    PreprocessConfig,
    SyncedDataset,
    TaskSegment,
    build_dataset,
    featurize,
    load_dataset,
    prepare_sensors,
    prepare_skeleton,
    save_dataset,
    split_boundary,
    window,
)
from synth import LEFT_FILE, MOCAP_FILE, RIGHT_FILE, SynthConfig, emit_dataset, load_manifest
from train import TrainConfig, fit

__version__ = "0.1.0"
OUTPUT_ROOT_ENV = "INSOLE_POSE_OUTPUT_ROOT"
RUN_MANIFEST = "run_manifest.json"
LEFT_IMU_FILE = "left_imu.csv"
RIGHT_IMU_FILE = "right_imu.csv"
PRESETS = {"desk": ModelConfig.desk, "full": ModelConfig.full}
CONFIG_SECTIONS = {"synth", "preprocess", "model", "train", "preset"}

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


def _detect_git_sha() -> str:
    try:
        output = subprocess.check_output(
            ["git", "rev-parse", "--short", "HEAD"], stderr=subprocess.DEVNULL
        )
        return output.decode().strip() or "unknown"
    except Exception:
        return "unknown"


GIT_SHA = _detect_git_sha()
TOOL_VERSION = f"{__version__}+{GIT_SHA}"


class RunConfig(BaseModel):
    preset: str = "desk"
    synth: SynthConfig = Field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    model: ModelConfig = Field(default_factory=ModelConfig.desk)
    train: TrainConfig = Field(default_factory=TrainConfig)

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunManifest(BaseModel):
    command: str
    config: Dict[str, object]
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    config_hash: str
    tool_version: str = TOOL_VERSION
    wall_time_s: float = 0.0

    def write(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RUN_MANIFEST
        path.write_text(
            json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return path


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or "outputs")


def _rebuild(config: M, **update) -> M:
    """Re-validate with `update` applied; explicitly set fields stay marked as set."""
    return type(config)(**{**config.model_dump(exclude_unset=True), **update})


def load_run_config(path: Path | None = None, preset: str | None = None) -> RunConfig:
    data: Dict[str, object] = {}
    if path is not None:
        if not path.is_file():
            raise ParameterError(f"Config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"{path}: {exc}") from exc
    unknown = sorted(set(data) - CONFIG_SECTIONS)
    if unknown:
        raise ParameterError(f"Unknown config sections: {', '.join(unknown)}")
    chosen = preset or str(data.get("preset", "desk"))
    if chosen not in PRESETS:
        raise ParameterError(f"Unknown preset {chosen!r}; use one of {sorted(PRESETS)}")

    def section(name: str) -> Dict[str, object]:
        value = data.get(name, {})
        if not isinstance(value, dict):
            raise ParameterError(f"[{name}] must be a table")
        return value

    return RunConfig(
        preset=chosen,
        synth=SynthConfig(**section("synth")),
        preprocess=PreprocessConfig(**section("preprocess")),
        model=PRESETS[chosen](**section("model")),
        train=TrainConfig(**section("train")),
    )


def apply_overrides(run: RunConfig, args: argparse.Namespace) -> RunConfig:
    synth, preprocess, model, train = run.synth, run.preprocess, run.model, run.train
    seed = getattr(args, "seed", None)
    if seed is not None:
        synth = _rebuild(synth, seed=seed)
        model = _rebuild(model, seed=seed)
        train = _rebuild(train, seed=seed)
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        train = _rebuild(train, epochs=epochs)
    derivatives = getattr(args, "derivatives", None)
    if derivatives is not None:
        enabled = derivatives == "on"
        preprocess = _rebuild(preprocess, with_derivatives=enabled)
        train = _rebuild(train, with_derivatives=enabled)
        model = _rebuild(model, input_width=FRAME_WIDTH * (3 if enabled else 1))
    precision = getattr(args, "precision", None)
    if precision is not None:
        model = _rebuild(model, precision=precision)
    return RunConfig(
        preset=run.preset, synth=synth, preprocess=preprocess, model=model, train=train
    )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    path = Path(args.config) if getattr(args, "config", None) else None
    return apply_overrides(load_run_config(path, getattr(args, "preset", None)), args)


def raw_hash(paths: Sequence[Path]) -> str:
    digest = hashlib.sha256()
    for path in sorted(paths, key=lambda p: p.name):
        digest.update(path.name.encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


@contextlib.contextmanager
def _stage(name: str) -> Iterator[None]:
    """Prefix data errors with the pipeline stage that raised them."""
    try:
        yield
    except (AlignmentError, ContractError, DataError, FormatError, ParseError, LayoutError) as exc:
        raise DataError(f"{name}: {exc}") from exc


def _manifest(
    command: str,
    run: RunConfig,
    started: float,
    inputs: Dict[str, str] | None = None,
    outputs: Dict[str, str] | None = None,
) -> RunManifest:
    return RunManifest(
        command=command,
        config=run.model_dump(mode="json"),
        inputs=inputs or {},
        outputs=outputs or {},
        seeds={"synth": run.synth.seed, "model": run.model.seed, "train": run.train.seed},
        config_hash=run.config_hash(),
        wall_time_s=time.perf_counter() - started,
    )


def _out_dir(args: argparse.Namespace, command: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else output_root() / command


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run = resolve_config(args)
    out_dir = _out_dir(args, "synth")
    manifest = emit_dataset(run.synth, out_dir)
    _manifest(
        "synth",
        run,
        started,
        outputs={key: str(out_dir / name) for key, name in manifest.files.items()},
    ).write(out_dir)
    print(f"Wrote {len(manifest.segments)} task segments to {out_dir}")
    return 0


def _raw_inputs(raw_dir: Path) -> Tuple[Dict[str, Path], List[TaskSegment], AmplifierParams | None]:
    files = {"left": LEFT_FILE, "right": RIGHT_FILE, "mocap": MOCAP_FILE}
    segments: List[TaskSegment] = []
    amplifier = None
    if (raw_dir / "manifest.json").exists():
        emission = load_manifest(raw_dir)
        files = dict(emission.files)
        segments = emission.task_segments()
        amplifier = emission.amplifier
    paths = {key: raw_dir / name for key, name in files.items()}
    for key, name in (("left_imu", LEFT_IMU_FILE), ("right_imu", RIGHT_IMU_FILE)):
        if (raw_dir / name).exists():
            paths[key] = raw_dir / name
    for key in ("left", "right", "mocap"):
        if not paths[key].exists():
            raise FormatError(f"Raw directory {raw_dir} has no {key} file {paths[key].name}")
    return paths, segments, amplifier


def _read_sensors(
    paths: Dict[str, Path], params: AmplifierParams
) -> Tuple[SensorSeries, SensorSeries]:
    left, _ = read_insole_csv(paths["left"], FootSide.LEFT, params)
    right, _ = read_insole_csv(paths["right"], FootSide.RIGHT, params)
    if "left_imu" in paths:
        left = substitute_imu(left, read_imu_csv(paths["left_imu"])[0])
    if "right_imu" in paths:
        right = substitute_imu(right, read_imu_csv(paths["right_imu"])[0])
    return left, right


def cmd_preprocess(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run = resolve_config(args)
    config = run.preprocess
    raw_dir = Path(args.raw_dir)
    out_dir = _out_dir(args, "preprocess")

    with _stage("ingest"):
        paths, segments, amplifier = _raw_inputs(raw_dir)
        left, right = _read_sensors(paths, amplifier or run.synth.amplifier)
        skeleton, _ = read_mocap_csv(paths["mocap"])
    if not segments:
        end = max(left.span[1], right.span[1], skeleton.span[1]) + 1.0
        segments = [TaskSegment(TaskLabel.UNKNOWN, 0.0, end)]
    with _stage("smooth/resample"):
        sensors = prepare_sensors(left, right, config)
        skeleton_segments = prepare_skeleton(skeleton, config)
    with _stage("synchronize/standardize"):
        dataset = build_dataset(sensors, skeleton_segments, segments, config)
    with _stage("window"):
        windows = window(dataset, config.window_length, config.window_stride)

    header = save_dataset(
        dataset, out_dir, config, run.config_hash(), raw_hash(list(paths.values()))
    )
    _manifest(
        "preprocess",
        run,
        started,
        inputs={key: str(path) for key, path in paths.items()},
        outputs={"header": str(header)},
    ).write(out_dir)
    print(
        f"Wrote {len(dataset)} frames, {len(dataset.recordings)} recordings, "
        f"{len(windows)} windows ({config.feature_width} features) to {out_dir}"
    )
    return 0


def _resolve_model(run: RunConfig, feature_width: int, strict: bool = True) -> ModelConfig:
    """Model config sized to the artifacts; an explicitly configured width must agree."""
    explicit = (
        "input_width" in run.model.model_fields_set
        or "with_derivatives" in run.preprocess.model_fields_set
    )
    expected = run.model.input_width
    if "input_width" not in run.model.model_fields_set:
        expected = FRAME_WIDTH * (3 if run.preprocess.with_derivatives else 1)
    if strict and explicit and expected != feature_width:
        raise CompatibilityError(
            f"Artifacts hold {feature_width} features per frame, model expects {expected}"
        )
    return _rebuild(run.model, input_width=feature_width)


def _train(
    run: RunConfig, artifacts: Path, out_dir: Path, strict: bool = True
) -> Tuple[Path, SyncedDataset, Dict[str, object]]:
    dataset, preprocess, header = load_dataset(artifacts)
    model_config = _resolve_model(run, dataset.features.width, strict)
    meta = {"raw_hash": header.get("raw_hash", ""), "artifact_hash": header.get("config_hash", "")}
    with _stage("train"):
        history, checkpoint = fit(dataset, model_config, run.train, out_dir, preprocess, meta)
    for epoch, train_loss, val_loss in zip(
        history.epoch, history.train_loss, history.val_loss, strict=True
    ):
        print(f"epoch {epoch:4d}  train {train_loss:.6f}  val {val_loss:.6f}")
    return checkpoint, dataset, header


def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run = resolve_config(args)
    artifacts = Path(args.artifacts)
    out_dir = _out_dir(args, "train")
    checkpoint, _, _ = _train(run, artifacts, out_dir)
    _manifest(
        "train",
        run,
        started,
        inputs={"artifacts": str(artifacts)},
        outputs={"checkpoint": str(checkpoint), "history": str(out_dir / "history.csv")},
    ).write(out_dir)
    return 0


def _validation_rows(dataset: SyncedDataset, ratio: float) -> List[Tuple[int, slice, slice]]:
    """(recording index, train rows, validation rows) using the chronological split."""
    spans = []
    for idx, recording in enumerate(dataset.recordings):
        stamps = dataset.recording_rows(recording)[0]
        boundary = split_boundary(stamps, ratio)
        first_val = int(np.searchsorted(stamps, boundary, side="left"))
        start = recording.start_row
        spans.append(
            (idx, slice(start, start + first_val), slice(start + first_val, recording.stop_row))
        )
    return spans


def evaluate_checkpoint(checkpoint_path: Path, artifacts: Path, out_dir: Path) -> ErrorReport:
    checkpoint = load_weights(checkpoint_path)
    dataset, preprocess, header = load_dataset(artifacts)
    if checkpoint.config.input_width != dataset.features.width:
        raise CompatibilityError(
            f"Checkpoint expects {checkpoint.config.input_width} features per frame, "
            f"artifacts hold {dataset.features.width}"
        )
    stored = checkpoint.meta.get("split_ratio", preprocess.split_ratio)
    ratio = float(stored)  # type: ignore[arg-type]
    errors: List[np.ndarray] = []
    baseline: List[np.ndarray] = []
    tasks: List[TaskLabel] = []
    split = _validation_rows(dataset, ratio)
    train_targets = np.vstack([dataset.skeleton.values[rows] for _, rows, _ in split])
    for idx, _, rows in split:
        recording = dataset.recordings[idx]
        frames = rows.stop - rows.start
        if frames < checkpoint.config.window:
            logger.warning("Skipping %s: %d validation frames", recording.name, frames)
            continue
        features = dataset.features.slice(rows.start, rows.stop).replace(task=recording.task)
        truth = dataset.skeleton.slice(rows.start, rows.stop)
        predicted = predict_series(
            checkpoint.weights, checkpoint.config, features, checkpoint.target_stats
        )
        errors.append(joint_errors(predicted, truth))
        baseline.append(joint_errors(mean_pose_baseline(train_targets, truth), truth))
        tasks.extend([recording.task] * frames)
    if not errors:
        raise DataError("No recording has enough validation frames to evaluate")

    matrix = np.vstack(errors)
    report = build_report(
        matrix,
        tasks,
        np.vstack(baseline),
        meta={
            "checkpoint": checkpoint_path.name,
            "raw_hash": header.get("raw_hash", ""),
            "frames": int(matrix.shape[0]),
        },
    )
    write_report(report, out_dir, matrix, tasks)
    logger.info(
        "Validation RMSE %.2f mm (mean-pose baseline %.2f mm)",
        report.overall_rmse,
        report.baseline_rmse,
    )
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run = resolve_config(args)
    out_dir = _out_dir(args, "eval")
    report = evaluate_checkpoint(Path(args.checkpoint), Path(args.artifacts), out_dir)
    _manifest(
        "eval",
        run,
        started,
        inputs={"checkpoint": str(args.checkpoint), "artifacts": str(args.artifacts)},
        outputs={"report": str(out_dir / "report.json")},
    ).write(out_dir)
    print(f"RMSE {report.overall_rmse:.2f} mm (mean-pose baseline {report.baseline_rmse:.2f} mm)")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run = resolve_config(args)
    out_dir = _out_dir(args, "ablate")
    seed_with = args.seed_with if args.seed_with is not None else run.train.seed
    seed_without = args.seed_without if args.seed_without is not None else run.train.seed
    if seed_with != seed_without:
        raise GuardError(f"Arms use different seeds ({seed_with} vs {seed_without})")
    arms = {"with": Path(args.with_artifacts), "without": Path(args.without_artifacts)}
    hashes = {name: load_dataset(path)[2].get("raw_hash") for name, path in arms.items()}
    if hashes["with"] != hashes["without"]:
        raise GuardError("Artifact sets were preprocessed from different raw data")

    reports: Dict[str, ErrorReport] = {}
    for name, artifacts in arms.items():
        arm_dir = out_dir / name
        checkpoint, _, _ = _train(run, artifacts, arm_dir, strict=False)
        reports[name] = evaluate_checkpoint(checkpoint, artifacts, arm_dir / "eval")
    comparison = ablation_compare(
        reports["with"], reports["without"], "with derivatives", "without derivatives"
    )
    written = write_comparison(comparison, out_dir)
    _manifest(
        "ablate",
        run,
        started,
        inputs={name: str(path) for name, path in arms.items()},
        outputs={path.suffix.lstrip("."): str(path) for path in written},
    ).write(out_dir)
    for task, a, b, delta in zip(
        comparison.tasks, comparison.rmse_a, comparison.rmse_b, comparison.delta, strict=True
    ):
        print(f"{task:>14}  with {a:8.2f}  without {b:8.2f}  delta {delta:+8.2f}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run = resolve_config(args)
    checkpoint = load_weights(Path(args.checkpoint))
    if checkpoint.stats is None or checkpoint.target_stats is None or not checkpoint.preprocess:
        raise CompatibilityError(f"{args.checkpoint} carries no preprocessing statistics")
    config = PreprocessConfig(**checkpoint.preprocess)
    paths = {"left": Path(args.left), "right": Path(args.right)}
    if args.left_imu:
        paths["left_imu"] = Path(args.left_imu)
    if args.right_imu:
        paths["right_imu"] = Path(args.right_imu)

    with _stage("ingest"):
        left, right = _read_sensors(paths, run.synth.amplifier)
    with _stage("smooth/resample"):
        sensors = prepare_sensors(left, right, config)
        features = featurize(sensors, checkpoint.stats, config)
    if features.width != checkpoint.config.input_width:
        raise CompatibilityError(
            f"Checkpoint expects {checkpoint.config.input_width} features, "
            f"preprocessing produced {features.width}"
        )
    predicted: SkeletonSeries = predict_series(
        checkpoint.weights, checkpoint.config, features, checkpoint.target_stats
    )
    out = Path(args.out) if args.out else output_root() / "predict" / "prediction.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mocap_csv(out, predicted)
    _manifest(
        "predict",
        run,
        started,
        inputs={key: str(path) for key, path in paths.items()},
        outputs={"prediction": str(out)},
    ).write(out.parent)
    print(f"Wrote {len(predicted)} predicted frames to {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    run = resolve_config(args)
    out_dir = _out_dir(args, "report")
    report_path = Path(args.report)
    try:
        report = ErrorReport.model_validate_json(report_path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ReportError(f"{report_path} is not an error report: {exc}") from exc
    ours = report.task_rmse()
    outputs: Dict[str, str] = {}
    for spec in args.baseline:
        name, sep, table_path = spec.partition("=")
        if not sep or not name or not table_path:
            raise ParameterError(f"--baseline expects NAME=table.csv, got {spec!r}")
        theirs = load_baseline_table(Path(table_path))
        shared = [task for task in ours if task in theirs]
        if not shared:
            raise ReportError(f"{name} shares no task with {report_path.name}")
        dropped = sorted(set(ours).symmetric_difference(theirs))
        if dropped:
            logger.warning("Comparing on %d shared tasks; ignoring %s", len(shared), dropped)
        comparison = ablation_compare(
            {task: theirs[task] for task in shared},
            {task: ours[task] for task in shared},
            name,
            args.label,
        )
        for path in write_comparison(comparison, out_dir, stem=f"compare_{name}"):
            outputs[path.name] = str(path)
    _manifest("report", run, started, inputs={"report": str(report_path)}, outputs=outputs).write(
        out_dir
    )
    print(f"Wrote {len(outputs)} comparison files to {out_dir}")
    return 0


def _add_common(parser: argparse.ArgumentParser, out_help: str) -> None:
    parser.add_argument("--config", help="TOML file with [synth] [preprocess] [model] [train]")
    parser.add_argument("--out", help=out_help)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--preset", choices=sorted(PRESETS))
    parser.add_argument("--precision", choices=["float32", "float64"])
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--derivatives", choices=["on", "off"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="insole-pose", description="Pressure-insole to full-body pose pipeline"
    )
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    parser.add_argument("--log-level", default="INFO")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="emit a synthetic raw dataset")
    _add_common(synth, "output directory for the CSV set")
    synth.set_defaults(handler=cmd_synth)

    preprocess = commands.add_parser("preprocess", help="build synchronized artifacts")
    preprocess.add_argument("raw_dir")
    _add_common(preprocess, "artifact directory")
    preprocess.set_defaults(handler=cmd_preprocess)

    train = commands.add_parser("train", help="train on preprocessed artifacts")
    train.add_argument("artifacts")
    _add_common(train, "directory for the checkpoint and history")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="score a checkpoint on the validation split")
    evaluate.add_argument("checkpoint")
    evaluate.add_argument("artifacts")
    _add_common(evaluate, "report directory")
    evaluate.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser("ablate", help="compare training with and without derivatives")
    ablate.add_argument("with_artifacts")
    ablate.add_argument("without_artifacts")
    ablate.add_argument("--seed-with", type=int)
    ablate.add_argument("--seed-without", type=int)
    _add_common(ablate, "comparison directory")
    ablate.set_defaults(handler=cmd_ablate)

    predict = commands.add_parser("predict", help="predict skeletons from insole CSVs")
    predict.add_argument("checkpoint")
    predict.add_argument("--left", required=True)
    predict.add_argument("--right", required=True)
    predict.add_argument("--left-imu")
    predict.add_argument("--right-imu")
    _add_common(predict, "output CSV path")
    predict.set_defaults(handler=cmd_predict)

    report = commands.add_parser("report", help="compare a stored report with baselines")
    report.add_argument("report")
    report.add_argument("--baseline", action="append", default=[], metavar="NAME=table.csv")
    report.add_argument("--label", default="model")
    _add_common(report, "comparison directory")
    report.set_defaults(handler=cmd_report)
    return parser


EXIT_CODES: Tuple[Tuple[Tuple[type, ...], int], ...] = (
    ((NumericError,), 1),
    ((CompatibilityError, CheckpointError, ShapeError), 5),
    ((GuardError,), 6),
    ((EmissionError, OSError), 3),
    ((ParameterError, ValidationError), 2),
    ((DataError, AlignmentError, ContractError, FormatError, ParseError, LayoutError), 4),
    ((ReportError,), 4),
)


def exit_code_for(exc: BaseException) -> int:
    for kinds, code in EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return 2


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=str(args.log_level).upper(), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return int(args.handler(args))
    except (ValueError, OSError) as exc:
        code = exit_code_for(exc)
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
