"""Pre-norm transformer encoder that maps sensor feature windows to per-frame skeletons,
plus windowed inference and the binary checkpoint container."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError, model_validator

from core import (
    FRAME_WIDTH,
    SKELETON_WIDTH,
    CheckpointError,
    DataError,
    NumericError,
    ParameterError,
    SensorSeries,
    ShapeError,
    SkeletonSeries,
)
from numerics import (
    PRECISIONS,
    RngStream,
    Tensor,
    constant,
    dropout,
    gelu,
    layer_norm,
    parameter,
    resolve_dtype,
    softmax,
)
from preprocess import ChannelStats, TargetStats

logger = logging.getLogger(__name__)

MAGIC = b"P2PI"
FORMAT_VERSION = 1
INFERENCE_STRIDE = 25
INFERENCE_BATCH = 32

ModelWeights = Dict[str, Tensor]


class ModelConfig(BaseModel):
    d_model: int = 512
    layers: int = 8
    heads: int = 8
    dropout: float = 0.1
    ff_dim: int = 0
    input_width: int = FRAME_WIDTH
    output_width: int = SKELETON_WIDTH
    window: int = 100
    precision: str = "float32"
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> ModelConfig:
        if self.d_model < 1 or self.layers < 1 or self.heads < 1:
            raise ParameterError("d_model, layers and heads must be positive")
        if self.d_model % self.heads:
            raise ParameterError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.input_width not in (FRAME_WIDTH, 3 * FRAME_WIDTH):
            raise ParameterError(
                f"input_width must be {FRAME_WIDTH} or {3 * FRAME_WIDTH}, got {self.input_width}"
            )
        if self.output_width != SKELETON_WIDTH:
            raise ParameterError(f"output_width must be {SKELETON_WIDTH}")
        if not 0 <= self.dropout < 1:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.window < 1:
            raise ParameterError("window must be positive")
        if self.precision not in PRECISIONS:
            raise ParameterError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.ff_dim <= 0:
            self.ff_dim = 4 * self.d_model
        return self

    @classmethod
    def full(cls, **overrides) -> ModelConfig:
        return cls(**{"d_model": 512, "layers": 8, "heads": 8, **overrides})

    @classmethod
    def desk(cls, **overrides) -> ModelConfig:
        return cls(**{"d_model": 64, "layers": 2, "heads": 4, **overrides})

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def dtype(self) -> type:
        return resolve_dtype(self.precision)


def weight_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Every learnable tensor, in checkpoint order."""
    d, ff = config.d_model, config.ff_dim
    shapes: Dict[str, Tuple[int, ...]] = {
        "input_proj.weight": (config.input_width, d),
        "input_proj.bias": (d,),
    }
    for i in range(config.layers):
        prefix = f"layers.{i}"
        shapes[f"{prefix}.attn_norm.gain"] = (d,)
        shapes[f"{prefix}.attn_norm.bias"] = (d,)
        for proj in ("q", "k", "v", "out"):
            shapes[f"{prefix}.attn.{proj}.weight"] = (d, d)
            shapes[f"{prefix}.attn.{proj}.bias"] = (d,)
        shapes[f"{prefix}.ff_norm.gain"] = (d,)
        shapes[f"{prefix}.ff_norm.bias"] = (d,)
        shapes[f"{prefix}.ff.w1.weight"] = (d, ff)
        shapes[f"{prefix}.ff.w1.bias"] = (ff,)
        shapes[f"{prefix}.ff.w2.weight"] = (ff, d)
        shapes[f"{prefix}.ff.w2.bias"] = (d,)
    shapes["final_norm.gain"] = (d,)
    shapes["final_norm.bias"] = (d,)
    shapes["output_head.weight"] = (d, config.output_width)
    shapes["output_head.bias"] = (config.output_width,)
    return shapes


def is_decayed(name: str) -> bool:
    return not name.endswith(".bias") and "norm" not in name


def init(config: ModelConfig) -> ModelWeights:
    """Xavier-uniform matrices, zero biases, unit layer-norm gains; fixed by config.seed."""
    rng = RngStream(config.seed)
    weights: ModelWeights = {}
    for name, shape in weight_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.symmetric(shape, bound)
        weights[name] = parameter(data.astype(config.dtype), name=name)
    return weights


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    if length < 1:
        raise ParameterError("Positional encoding needs length >= 1")
    positions = np.arange(length, dtype=np.float64)[:, None]
    pair = np.arange(0, d_model, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, pair / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return table


def _linear(x: Tensor, weights: ModelWeights, name: str) -> Tensor:
    return x @ weights[f"{name}.weight"] + weights[f"{name}.bias"]


def _norm(x: Tensor, weights: ModelWeights, name: str) -> Tensor:
    return layer_norm(x, weights[f"{name}.gain"], weights[f"{name}.bias"])


def _attention(
    x: Tensor,
    weights: ModelWeights,
    config: ModelConfig,
    prefix: str,
    training: bool,
    rng: RngStream | None,
    capture: List[np.ndarray] | None,
) -> Tensor:
    batch, steps, _ = x.shape
    heads, head_dim = config.heads, config.head_dim

    def split(t: Tensor) -> Tensor:
        return t.reshape(batch, steps, heads, head_dim).transpose(0, 2, 1, 3)

    q = split(_linear(x, weights, f"{prefix}.q"))
    k = split(_linear(x, weights, f"{prefix}.k"))
    v = split(_linear(x, weights, f"{prefix}.v"))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim))
    probs = softmax(scores, axis=-1)
    if capture is not None:
        capture.append(probs.data.copy())
    probs = dropout(probs, config.dropout, rng, training)
    context = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, steps, config.d_model)
    return _linear(context, weights, f"{prefix}.out")


def forward(
    weights: ModelWeights,
    config: ModelConfig,
    batch,
    training: bool = False,
    rng: RngStream | None = None,
    capture: List[np.ndarray] | None = None,
) -> Tensor:
    """(b, steps, input_width) -> (b, steps, 63). Attention maps land in `capture` if given."""
    inputs = batch if isinstance(batch, Tensor) else constant(batch, config.dtype)
    if inputs.data.ndim != 3 or inputs.shape[-1] != config.input_width:
        raise ShapeError(
            f"Expected (batch, steps, {config.input_width}) input, got {inputs.shape}"
        )
    steps = inputs.shape[1]
    pe = constant(positional_encoding(steps, config.d_model), config.dtype)
    x = _linear(inputs, weights, "input_proj") + pe

    for i in range(config.layers):
        prefix = f"layers.{i}"
        normed = _norm(x, weights, f"{prefix}.attn_norm")
        attended = _attention(normed, weights, config, f"{prefix}.attn", training, rng, capture)
        x = x + dropout(attended, config.dropout, rng, training)

        normed = _norm(x, weights, f"{prefix}.ff_norm")
        hidden = gelu(_linear(normed, weights, f"{prefix}.ff.w1"))
        x = x + dropout(_linear(hidden, weights, f"{prefix}.ff.w2"), config.dropout, rng, training)
        if not np.all(np.isfinite(x.data)):
            raise NumericError("Non-finite activations", layer=i)

    x = _norm(x, weights, "final_norm")
    return _linear(x, weights, "output_head")


def window_starts(length: int, window: int, stride: int = INFERENCE_STRIDE) -> List[int]:
    if length < window:
        raise DataError(f"Series of {length} frames is shorter than the {window}-frame window")
    starts = list(range(0, length - window + 1, stride))
    if starts[-1] + window < length:
        starts.append(length - window)
    return starts


def predict_series(
    weights: ModelWeights,
    config: ModelConfig,
    features: SensorSeries,
    target_stats: TargetStats | None = None,
    stride: int = INFERENCE_STRIDE,
) -> SkeletonSeries:
    """Slide the window over the series and average every frame over its covering windows."""
    if features.width != config.input_width:
        raise ShapeError(f"Features are {features.width} wide, model expects {config.input_width}")
    length = len(features)
    starts = window_starts(length, config.window, stride)
    totals = np.zeros((length, config.output_width))
    counts = np.zeros((length, 1))
    for chunk in range(0, len(starts), INFERENCE_BATCH):
        group = starts[chunk : chunk + INFERENCE_BATCH]
        batch = np.stack([features.values[s : s + config.window] for s in group])
        output = forward(weights, config, batch, training=False).data.astype(np.float64)
        for offset, start in enumerate(group):
            totals[start : start + config.window] += output[offset]
            counts[start : start + config.window] += 1
    values = totals / counts
    if target_stats is not None:
        values = target_stats.restore(values)
    return SkeletonSeries(
        features.timestamps,
        values,
        subject=features.subject,
        task=features.task,
        sample_rate_hz=features.sample_rate_hz,
    )


@dataclass
class Checkpoint:
    weights: ModelWeights
    config: ModelConfig
    stats: ChannelStats | None = None
    target_stats: TargetStats | None = None
    preprocess: Dict[str, object] | None = None
    meta: Dict[str, object] = field(default_factory=dict)


def save_weights(
    path: Path,
    weights: ModelWeights,
    config: ModelConfig,
    stats: ChannelStats | None = None,
    target_stats: TargetStats | None = None,
    preprocess: Dict[str, object] | None = None,
    meta: Dict[str, object] | None = None,
) -> Path:
    """Write the checkpoint to a temporary file, then move it into place.

    Layout: MAGIC, little-endian uint32 format version and header length, the JSON header
    (config, channel and target stats, tensor table), then the raw tensors in table order.
    Tensors are little-endian float32 (`<f4`). Weights held in float64 (64-bit verification
    runs) are stored as `<f8` instead, and the tensor table records the dtype, so that
    load(save(x)) stays bitwise in both precisions.
    """
    shapes = weight_shapes(config)
    entries = []
    chunks = []
    offset = 0
    for name, shape in shapes.items():
        if name not in weights:
            raise CheckpointError("missing tensor", name)
        data = weights[name].data
        if tuple(data.shape) != shape:
            raise CheckpointError(f"shape {tuple(data.shape)} != config shape {shape}", name)
        dtype = "<f8" if data.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(data, dtype=dtype).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(shape),
                "dtype": dtype,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)

    header = {
        "config": config.model_dump(),
        "stats": stats.to_dict() if stats else None,
        "target_stats": target_stats.to_dict() if target_stats else None,
        "preprocess": preprocess,
        "meta": meta or {},
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(path.name + ".tmp")
    with staging.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        handle.write(header_bytes)
        for raw in chunks:
            handle.write(raw)
    os.replace(staging, path)
    return path


def load_weights(path: Path) -> Checkpoint:
    """Read and validate the whole file before building any tensor."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError("file too short for the fixed header", "magic")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"expected {MAGIC!r}, found {blob[:4]!r}", "magic")
    version, header_len = struct.unpack_from("<II", blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported version {version}", "version")
    start = len(MAGIC) + 8
    if start + header_len > len(blob):
        raise CheckpointError("truncated header", "header")
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header JSON: {exc}", "header") from exc
    payload = memoryview(blob)[start + header_len :]

    try:
        config = ModelConfig(**header["config"])
    except (KeyError, TypeError, ValidationError, ParameterError) as exc:
        raise CheckpointError(f"invalid model config: {exc}", "config") from exc

    expected = weight_shapes(config)
    entries = {entry.get("name"): entry for entry in header.get("tensors", [])}
    for name in entries:
        if name not in expected:
            raise CheckpointError("unexpected tensor", str(name))
    arrays: Dict[str, np.ndarray] = {}
    end = 0
    for name, shape in expected.items():
        entry = entries.get(name)
        if entry is None:
            raise CheckpointError("missing tensor", name)
        if tuple(entry.get("shape", ())) != shape:
            raise CheckpointError(f"shape {entry.get('shape')} != config shape {list(shape)}", name)
        dtype = entry.get("dtype")
        if dtype not in ("<f4", "<f8"):
            raise CheckpointError(f"unsupported dtype {dtype!r}", name)
        offset = int(entry.get("offset", -1))
        nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if offset < 0 or int(entry.get("nbytes", -1)) != nbytes or offset + nbytes > len(payload):
            raise CheckpointError("tensor data truncated or misplaced", name)
        data = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(shape)
        if not np.all(np.isfinite(data)):
            raise CheckpointError("non-finite values", name)
        arrays[name] = data
        end = max(end, offset + nbytes)
    if end != len(payload):
        raise CheckpointError(f"{len(payload) - end} trailing payload bytes", "payload")

    weights = {
        name: parameter(np.array(data, dtype=config.dtype), name=name)
        for name, data in arrays.items()
    }
    try:
        stats = ChannelStats.from_dict(header["stats"]) if header.get("stats") else None
        target_stats = (
            TargetStats.from_dict(header["target_stats"]) if header.get("target_stats") else None
        )
    except ValueError as exc:
        raise CheckpointError(str(exc), "stats") from exc
    return Checkpoint(
        weights=weights,
        config=config,
        stats=stats,
        target_stats=target_stats,
        preprocess=header.get("preprocess"),
        meta=header.get("meta", {}),
    )
