"""MSE training loop with AdamW, a plateau scheduler and a chronological split."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from core import DataError, NumericError, ParameterError
from model import ModelConfig, ModelWeights, forward, init, is_decayed, save_weights
from numerics import RngStream, mse_loss, zero_grads
from preprocess import (
    PreprocessConfig,
    SyncedDataset,
    TargetStats,
    Window,
    fit_target_stats,
    split_boundary,
    window,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "best.ckpt"
HISTORY_CSV = "history.csv"
HISTORY_JSON = "history.json"


class SchedulerConfig(BaseModel):
    factor: float = 0.5
    patience: int = 10
    threshold: float = 1e-4
    min_lr: float = 1e-6


class TrainConfig(BaseModel):
    lr: float = 0.0005
    weight_decay: float = 0.001
    epochs: int = 200
    batch_size: int = 32
    split_ratio: float = 0.8
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    with_derivatives: bool = False
    grad_clip: float | None = None
    record_wall_time: bool = True

    @field_validator("split_ratio")
    @classmethod
    def _ratio(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ParameterError(f"split_ratio must lie in (0, 1), got {value}")
        return value

    @field_validator("lr")
    @classmethod
    def _lr(cls, value: float) -> float:
        if value <= 0:
            raise ParameterError(f"lr must be positive, got {value}")
        return value

    @field_validator("epochs", "batch_size")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ParameterError("epochs and batch_size must be at least 1")
        return value


class TrainHistory(BaseModel):
    epoch: List[int] = Field(default_factory=list)
    train_loss: List[float] = Field(default_factory=list)
    val_loss: List[float] = Field(default_factory=list)
    lr: List[float] = Field(default_factory=list)
    seconds: List[float] = Field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        """1-based epoch with the lowest validation loss (earliest on ties)."""
        if not self.val_loss:
            raise DataError("History is empty")
        return self.epoch[int(np.argmin(self.val_loss))]

    def append(
        self, epoch: int, train_loss: float, val_loss: float, lr: float, seconds: float
    ) -> None:
        self.epoch.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.lr.append(lr)
        self.seconds.append(seconds)

    def write(self, directory: Path) -> None:
        frame = pd.DataFrame(
            {
                "epoch": self.epoch,
                "train_loss": self.train_loss,
                "val_loss": self.val_loss,
                "lr": self.lr,
                "seconds": self.seconds,
            }
        )
        frame.to_csv(
            directory / HISTORY_CSV, index=False, lineterminator="\n", float_format="%.17g"
        )
        payload = {**self.model_dump(), "best_epoch": self.best_epoch if self.val_loss else None}
        (directory / HISTORY_JSON).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


@dataclass
class OptimizerState:
    first_moment: Dict[str, np.ndarray]
    second_moment: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(
        cls, weights: ModelWeights, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> OptimizerState:
        return cls(
            first_moment={name: np.zeros_like(t.data) for name, t in weights.items()},
            second_moment={name: np.zeros_like(t.data) for name, t in weights.items()},
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


@dataclass
class SchedulerState:
    lr: float
    best: float = float("inf")
    bad_epochs: int = 0
    reductions: List[int] = field(default_factory=list)


def collect_grads(weights: ModelWeights) -> Dict[str, np.ndarray]:
    return {
        name: t.grad if t.grad is not None else np.zeros_like(t.data) for name, t in weights.items()
    }


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale
    return total


def adamw_step(
    weights: ModelWeights,
    grads: Dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    weight_decay: float = 0.0,
) -> OptimizerState:
    """Decoupled weight decay, then the bias-corrected Adam update. Biases and layer-norm
    parameters are never decayed. Nothing is touched if any gradient is non-finite."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Non-finite gradient for {name}")
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, tensor in weights.items():
        grad = grads[name]
        if weight_decay and is_decayed(name):
            tensor.data *= 1.0 - lr * weight_decay
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        tensor.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return state


def plateau_scheduler(
    val_losses: Sequence[float], state: SchedulerState, config: SchedulerConfig
) -> float:
    """Reduce lr by `factor` once `patience` epochs pass without a relative improvement
    larger than `threshold`; never below min_lr."""
    if not val_losses:
        raise DataError("Scheduler needs at least one completed epoch")
    latest = float(val_losses[-1])
    if latest < state.best * (1.0 - config.threshold):
        state.best = latest
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
    if state.bad_epochs >= config.patience:
        reduced = max(state.lr * config.factor, config.min_lr)
        if reduced < state.lr:
            logger.info("Reducing learning rate %.3g -> %.3g", state.lr, reduced)
            state.reductions.append(len(val_losses))
        state.lr = reduced
        state.bad_epochs = 0
    return state.lr


def split_dataset(
    windows: Sequence[Window],
    ratio: float = 0.8,
    spans: Dict[int, Tuple[float, float]] | None = None,
) -> Tuple[List[Window], List[Window]]:
    """Chronological split inside each recording. Windows that straddle the boundary
    are dropped so no frame lands in both sets."""
    if len(windows) < 2:
        raise DataError("Splitting needs at least two windows")
    by_recording: Dict[int, List[Window]] = {}
    for item in windows:
        by_recording.setdefault(item.recording, []).append(item)

    train: List[Window] = []
    val: List[Window] = []
    for recording, items in sorted(by_recording.items()):
        if spans and recording in spans:
            t0, t1 = spans[recording]
        else:
            t0 = min(float(w.timestamps[0]) for w in items)
            t1 = max(float(w.timestamps[-1]) for w in items)
        boundary = split_boundary(np.array([t0, t1]), ratio)
        left = [w for w in items if w.timestamps[-1] < boundary]
        right = [w for w in items if w.timestamps[0] >= boundary]
        if not left or not right:
            raise DataError(
                f"Recording {recording} is too short for both a training and a validation window"
            )
        train.extend(left)
        val.extend(right)
    logger.info("Split %d windows into %d train / %d val", len(windows), len(train), len(val))
    return train, val


def stack_windows(
    windows: Sequence[Window], target_stats: TargetStats | None, dtype
) -> Tuple[np.ndarray, np.ndarray]:
    features = np.stack([w.features for w in windows]).astype(dtype)
    targets = np.stack([w.targets for w in windows])
    if target_stats is not None:
        targets = target_stats.standardize(targets)
    return features, targets.astype(dtype)


def evaluate_loss(
    weights: ModelWeights,
    config: ModelConfig,
    features: np.ndarray,
    targets: np.ndarray,
    batch_size: int = 32,
) -> float:
    """Mean squared error over every element, dropout off."""
    total = 0.0
    count = 0
    for start in range(0, features.shape[0], batch_size):
        batch = features[start : start + batch_size]
        pred = forward(weights, config, batch, training=False)
        loss = mse_loss(pred, targets[start : start + batch_size])
        total += float(loss.data) * pred.data.size
        count += pred.data.size
    return total / count


def fit(
    dataset: SyncedDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: Path,
    preprocess_config: PreprocessConfig | None = None,
    meta: Dict[str, object] | None = None,
) -> Tuple[TrainHistory, Path]:
    """Train with seeded shuffling; save a checkpoint whenever validation loss improves."""
    out_dir.mkdir(parents=True, exist_ok=True)
    preprocess_config = preprocess_config or PreprocessConfig()
    windows = window(dataset, model_config.window, preprocess_config.window_stride)
    spans: Dict[int, Tuple[float, float]] = {}
    for idx, recording in enumerate(dataset.recordings):
        stamps = dataset.recording_rows(recording)[0]
        spans[idx] = (float(stamps[0]), float(stamps[-1]))
    train_windows, val_windows = split_dataset(windows, train_config.split_ratio, spans)

    target_stats = dataset.target_stats or fit_target_stats(
        np.vstack([w.targets for w in train_windows])
    )
    dtype = model_config.dtype
    x_train, y_train = stack_windows(train_windows, target_stats, dtype)
    x_val, y_val = stack_windows(val_windows, target_stats, dtype)

    weights = init(model_config)
    state = OptimizerState.create(weights, train_config.beta1, train_config.beta2, train_config.eps)
    scheduler = SchedulerState(lr=train_config.lr)
    root = RngStream(train_config.seed)
    shuffle_rng = root.fork(1)
    dropout_rng = root.fork(2)

    history = TrainHistory()
    checkpoint = out_dir / CHECKPOINT_FILE
    best_val = float("inf")
    for epoch in range(1, train_config.epochs + 1):
        started = time.perf_counter()
        lr = scheduler.lr
        order = shuffle_rng.permutation(x_train.shape[0])
        running = 0.0
        for start in range(0, order.shape[0], train_config.batch_size):
            picked = order[start : start + train_config.batch_size]
            zero_grads(weights.values())
            pred = forward(weights, model_config, x_train[picked], training=True, rng=dropout_rng)
            loss = mse_loss(pred, y_train[picked])
            loss.backward()
            grads = collect_grads(weights)
            if train_config.grad_clip:
                clip_gradients(grads, train_config.grad_clip)
            try:
                adamw_step(weights, grads, state, lr, train_config.weight_decay)
            except NumericError:
                logger.error("Numeric failure at epoch %d; keeping %s", epoch, checkpoint)
                if history.val_loss:
                    history.write(out_dir)
                raise
            running += float(loss.data) * picked.shape[0]
        zero_grads(weights.values())

        train_loss = running / x_train.shape[0]
        val_loss = evaluate_loss(weights, model_config, x_val, y_val, train_config.batch_size)
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            if history.val_loss:
                history.write(out_dir)
            raise NumericError(f"Non-finite loss at epoch {epoch}")
        seconds = time.perf_counter() - started if train_config.record_wall_time else 0.0
        history.append(epoch, train_loss, val_loss, lr, seconds)
        logger.info(
            "Epoch %d/%d train %.6f val %.6f lr %.3g",
            epoch,
            train_config.epochs,
            train_loss,
            val_loss,
            lr,
        )

        if val_loss < best_val:
            best_val = val_loss
            save_weights(
                checkpoint,
                weights,
                model_config,
                stats=dataset.stats,
                target_stats=target_stats,
                preprocess=preprocess_config.model_dump(),
                meta={
                    **(meta or {}),
                    "epoch": epoch,
                    "val_loss": val_loss,
                    "split_ratio": train_config.split_ratio,
                },
            )
        plateau_scheduler(history.val_loss, scheduler, train_config.scheduler)

    history.write(out_dir)
    return history, checkpoint
