"""Minimal reverse-mode automatic differentiation over dense numpy tensors.

The tape is the implicit operation graph: every primitive attaches its
parents and a backward rule to the output tensor, and ``backward`` replays
the graph once in reverse topological order. Values are float64 throughout;
checkpoints are written as float32.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backprop: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; python scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _record(value: np.ndarray, parents: Sequence[Tensor], backprop) -> Tensor:
    out = Tensor(value, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    value = a.value + b.value

    def backprop(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))

    return _record(value, (a, b), backprop)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    value = a.value - b.value

    def backprop(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(-g, b.value.shape))

    return _record(value, (a, b), backprop)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    value = a.value * b.value

    def backprop(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return _record(value, (a, b), backprop)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    value = a.value / b.value

    def backprop(g):
        _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
        _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _record(value, (a, b), backprop)


def neg(a: Tensor) -> Tensor:
    def backprop(g):
        _accumulate(a, -g)

    return _record(-a.value, (a,), backprop)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.value.shape} and {b.value.shape}")
    value = a.value @ b.value

    def backprop(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return _record(value, (a, b), backprop)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]

    def backprop(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            _accumulate(t, g[tuple(idx)])
            offset += n

    return _record(value, tensors, backprop)


def tensor_sum(a: Tensor, axis: int | tuple[int, ...] | None = None,
               keepdims: bool = False) -> Tensor:
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def backprop(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.value.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.value.shape).copy())

    return _record(value, (a,), backprop)


def mean(a: Tensor) -> Tensor:
    n = a.value.size
    value = np.asarray(a.value.mean())

    def backprop(g):
        _accumulate(a, np.broadcast_to(g / n, a.value.shape).copy())

    return _record(value, (a,), backprop)


def relu(a: Tensor) -> Tensor:
    value = np.maximum(a.value, 0.0)

    def backprop(g):
        _accumulate(a, g * (a.value > 0.0))

    return _record(value, (a,), backprop)


def sigmoid(a: Tensor) -> Tensor:
    # Stable both directions: exp only ever sees non-positive arguments.
    x = a.value
    value = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backprop(g):
        _accumulate(a, g * value * (1.0 - value))

    return _record(value, (a,), backprop)


def softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backprop(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        _accumulate(a, (g - inner) * value)

    return _record(value, (a,), backprop)


def log(a: Tensor) -> Tensor:
    value = np.log(a.value)

    def backprop(g):
        _accumulate(a, g / a.value)

    return _record(value, (a,), backprop)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    value = np.maximum(a.value, floor)

    def backprop(g):
        _accumulate(a, g * (a.value >= floor))

    return _record(value, (a,), backprop)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def backprop(g):
        _accumulate(a, g.reshape(a.value.shape))

    return _record(a.value.reshape(shape), (a,), backprop)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def backprop(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))

    return _record(np.broadcast_to(a.value, shape).copy(), (a,), backprop)


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ValueError(f"transpose: expected 2-d tensor, got shape {a.value.shape}")

    def backprop(g):
        _accumulate(a, g.T)

    return _record(a.value.T.copy(), (a,), backprop)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backprop(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[idx] = g
            _accumulate(a, full)

    return _record(a.value[idx].copy(), (a,), backprop)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)

    def backprop(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            np.add.at(full, indices, g)
            _accumulate(a, full)

    return _record(a.value[indices].copy(), (a,), backprop)


def straight_through_round(a: Tensor) -> Tensor:
    """Threshold at 0.5 in the forward pass, pass gradients through unchanged.

    The backward rule is the straight-through surrogate, not the derivative
    of the forward step function, so this op is deliberately excluded from
    finite-difference gradient checks.
    """
    value = (a.value > 0.5).astype(np.float64)

    def backprop(g):
        _accumulate(a, g)

    return _record(value, (a,), backprop)


# ---------------------------------------------------------------------------
# Backpropagation
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate .grad on every tracked tensor reachable from a scalar loss.

    Gradients accumulate across calls until explicitly zeroed.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.value.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tracked tensor")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    # Propagate only this traversal's contribution, so grads left over from
    # earlier backward calls accumulate without being re-propagated.
    before = {id(node): None if node.grad is None else node.grad.copy()
              for node in order if node._backprop is not None}
    _accumulate(loss, np.ones_like(loss.value))
    for node in reversed(order):
        if node._backprop is not None:
            prior = before[id(node)]
            upstream = node.grad if prior is None else node.grad - prior
            node._backprop(upstream)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Adam optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction. step() consumes grads but never zeroes them."""

    def __init__(self, params: Sequence[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"adam: parameter {i} has no gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)


# ---------------------------------------------------------------------------
# Checkpoints: params.json manifest + params.f32 little-endian payload
# ---------------------------------------------------------------------------

class CheckpointError(ValueError):
    """Raised when a checkpoint manifest and payload disagree."""


def save_params(directory: str | Path, named: dict[str, Tensor | np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    chunks = []
    for name, t in named.items():
        arr = t.value if isinstance(t, Tensor) else np.asarray(t)
        manifest.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.astype("<f4").ravel())
    (directory / "params.json").write_text(json.dumps(manifest, indent=1))
    payload = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    (directory / "params.f32").write_bytes(payload.tobytes())


def load_params(directory: str | Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest_path = directory / "params.json"
    payload_path = directory / "params.f32"
    if not manifest_path.exists():
        raise CheckpointError(f"checkpoint: missing {manifest_path}")
    if not payload_path.exists():
        raise CheckpointError(f"checkpoint: missing {payload_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint: params.json is not valid JSON: {exc}") from exc
    payload = np.frombuffer(payload_path.read_bytes(), dtype="<f4")
    total = sum(int(np.prod(entry["shape"])) for entry in manifest)
    if total != payload.size:
        raise CheckpointError(
            f"checkpoint: params.f32 holds {payload.size} floats, manifest expects {total}")
    out: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        out[entry["name"]] = payload[offset:offset + n].astype(np.float64).reshape(shape)
        offset += n
    return out
