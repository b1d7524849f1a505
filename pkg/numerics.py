"""Dense tensors with reverse-mode differentiation, just wide enough for the encoder.

Broadcasting is limited to what the model uses: adding a trailing-axis bias or a
positional table with a leading batch axis, and scalar scaling.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.special import erf

from core import ParameterError, ShapeError

PRECISIONS = {"float32": np.float32, "float64": np.float64}
MAX_AXES = 4
GRADIENT_FLOOR = 1e-5


def resolve_dtype(precision: str) -> type:
    try:
        return PRECISIONS[precision]
    except KeyError as exc:
        raise ParameterError(f"Unknown precision {precision!r}; use float32 or float64") from exc


class Tensor:
    def __init__(
        self,
        data,
        *,
        requires_grad: bool = False,
        parents: Sequence[Tensor] = (),
        name: str = "",
    ) -> None:
        self.data = np.asarray(data)
        if self.data.ndim > MAX_AXES:
            raise ShapeError(f"Tensors have at most {MAX_AXES} axes, got {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)
        self._backward: Callable[[np.ndarray], None] | None = None

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, dtype={self.data.dtype})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = np.asarray(grad, dtype=self.data.dtype)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self) -> None:
        """Propagate d(self)/d(node) to every node of the graph that needs a gradient."""
        if self.data.size != 1:
            raise ShapeError("backward() starts from a scalar")
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other) -> Tensor:
        return add(self, _lift(other, self))

    def __radd__(self, other) -> Tensor:
        return add(_lift(other, self), self)

    def __mul__(self, other) -> Tensor:
        return mul(self, _lift(other, self))

    def __rmul__(self, other) -> Tensor:
        return mul(_lift(other, self), self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes)

    def sum(self) -> Tensor:
        return sum_all(self)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data + b.data, parents=(a, b))
    except ValueError as exc:
        raise ShapeError(f"Cannot add shapes {a.shape} and {b.shape}") from exc

    def _backward(grad: np.ndarray) -> None:
        a._accumulate(_unbroadcast(grad, a.shape))
        b._accumulate(_unbroadcast(grad, b.shape))

    out._backward = _backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data * b.data, parents=(a, b))
    except ValueError as exc:
        raise ShapeError(f"Cannot multiply shapes {a.shape} and {b.shape}") from exc

    def _backward(grad: np.ndarray) -> None:
        a._accumulate(_unbroadcast(grad * b.data, a.shape))
        b._accumulate(_unbroadcast(grad * a.data, b.shape))

    out._backward = _backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., m, k) @ (k, n) or batched (..., m, k) @ (..., k, n)."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), parents=(a, b))

    def _backward(grad: np.ndarray) -> None:
        a._accumulate(_unbroadcast(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.data.ndim == 2:
            flat_a = a.data.reshape(-1, a.shape[-1])
            flat_g = grad.reshape(-1, grad.shape[-1])
            b._accumulate(flat_a.T @ flat_g)
        else:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape))

    out._backward = _backward
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = Tensor(x.data.reshape(tuple(shape)), parents=(x,))
    except ValueError as exc:
        raise ShapeError(f"Cannot reshape {x.shape} to {tuple(shape)}") from exc
    out._backward = lambda grad: x._accumulate(grad.reshape(x.shape))
    return out


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.transpose(x.data, axes), parents=(x,))
    inverse = tuple(np.argsort(axes))
    out._backward = lambda grad: x._accumulate(np.transpose(grad, inverse))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), parents=(x,))
    out._backward = lambda grad: x._accumulate(np.broadcast_to(grad, x.shape))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax. Entries at -inf get weight 0; an all -inf row yields zeros."""
    peak = np.max(x.data, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    exps = np.exp(x.data - peak)
    total = exps.sum(axis=axis, keepdims=True)
    probs = exps / np.where(total > 0, total, 1.0)
    out = Tensor(probs, parents=(x,))

    def _backward(grad: np.ndarray) -> None:
        inner = (grad * probs).sum(axis=axis, keepdims=True)
        x._accumulate(probs * (grad - inner))

    out._backward = _backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = Tensor(normed * gain.data + bias.data, parents=(x, gain, bias))

    def _backward(grad: np.ndarray) -> None:
        lead = tuple(range(grad.ndim - 1))
        gain._accumulate(_unbroadcast((grad * normed).sum(axis=lead), gain.shape))
        bias._accumulate(_unbroadcast(grad.sum(axis=lead), bias.shape))
        d_normed = grad * gain.data
        x._accumulate(
            inv_std
            * (
                d_normed
                - d_normed.mean(axis=-1, keepdims=True)
                - normed * (d_normed * normed).mean(axis=-1, keepdims=True)
            )
        )

    out._backward = _backward
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out = Tensor(x.data * cdf, parents=(x,))

    def _backward(grad: np.ndarray) -> None:
        pdf = np.exp(-0.5 * x.data**2) / math.sqrt(2.0 * math.pi)
        x._accumulate(grad * (cdf + x.data * pdf))

    out._backward = _backward
    return out


def dropout(x: Tensor, rate: float, rng: RngStream | None, training: bool) -> Tensor:
    if not 0 <= rate < 1:
        raise ParameterError(f"Dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ParameterError("Training-mode dropout needs an RngStream")
    keep = rng.uniform(x.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(x.data.dtype)
    out = Tensor(x.data * scale, parents=(x,))
    out._backward = lambda grad: x._accumulate(grad * scale)
    return out


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"Prediction {pred.shape} and target {target.shape} differ")
    diff = pred.data - target
    out = Tensor(np.mean(diff**2), parents=(pred,))
    out._backward = lambda grad: pred._accumulate(grad * 2.0 * diff / diff.size)
    return out


class RngStream:
    """Counter-based generator: each draw uses Philox keyed by the seed at the current
    counter, then advances the counter, so (seed, counter) fixes the draw."""

    def __init__(self, seed: int, counter: int = 0) -> None:
        if seed < 0:
            raise ParameterError(f"Seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.counter = int(counter)

    def _next(self) -> np.random.Generator:
        bit_generator = np.random.Philox(key=self.seed, counter=self.counter << 128)
        self.counter += 1
        return np.random.Generator(bit_generator)

    def uniform(self, shape: Sequence[int]) -> np.ndarray:
        return self._next().random(tuple(shape))

    def symmetric(self, shape: Sequence[int], bound: float) -> np.ndarray:
        return self._next().uniform(-bound, bound, tuple(shape))

    def normal(self, shape: Sequence[int], scale: float = 1.0) -> np.ndarray:
        return self._next().normal(0.0, scale, tuple(shape))

    def permutation(self, n: int) -> np.ndarray:
        return self._next().permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        return self._next().choice(n, size=size, replace=False)

    def fork(self, offset: int) -> RngStream:
        """Independent stream for a sub-task, derived from the seed only."""
        return RngStream(self.seed, (1 << 64) + offset)


def zero_grads(params: Iterable[Tensor]) -> None:
    for tensor in params:
        tensor.zero_grad()


def check_gradients(
    f: Callable[[], Tensor],
    params: Dict[str, Tensor],
    h: float = 1e-5,
    samples: int | None = 200,
    seed: int = 0,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    `f` must rebuild the graph from `params` on every call and be deterministic.
    Relative error is |a - n| / max(|a|, |n|, 1e-5).
    """
    for name, tensor in params.items():
        if tensor.data.dtype != np.float64:
            raise ParameterError(f"Gradient checks need float64 tensors; {name} is {tensor.dtype}")

    zero_grads(params.values())
    f().backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }

    coords = [(name, idx) for name, t in params.items() for idx in range(t.data.size)]
    if samples is not None and len(coords) > samples:
        picks = RngStream(seed).choice(len(coords), samples)
        coords = [coords[int(i)] for i in sorted(picks)]

    worst = 0.0
    for name, idx in coords:
        data = params[name].data
        original = float(data.flat[idx])
        data.flat[idx] = original + h
        plus = float(f().data)
        data.flat[idx] = original - h
        minus = float(f().data)
        data.flat[idx] = original
        numeric = (plus - minus) / (2.0 * h)
        reverse = float(analytic[name].reshape(-1)[idx])
        scale = max(abs(reverse), abs(numeric), GRADIENT_FLOOR)
        worst = max(worst, abs(reverse - numeric) / scale)
    zero_grads(params.values())
    return worst
