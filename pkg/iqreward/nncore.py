"""Dense-tensor reverse-mode autodiff with the layers the IQ model needs.

A Tensor wraps a float64 numpy array. Every op records its parents and a
backward closure; ``Tensor.backward()`` walks the recorded graph in reverse
topological order and accumulates gradients into ``.grad``. Gradients
accumulate across calls, callers zero them between optimisation steps.

Ops accept 1-D vectors or batches with leading dimensions; matrix weights are
stored as (out_features, in_features) and applied as ``x @ W.T``.
"""

from __future__ import annotations

import json
import logging
import struct
from collections.abc import Iterator, Mapping, Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np
from scipy.special import expit

from .errors import CorruptFileError, ShapeError, VersionMismatchError

logger = logging.getLogger(__name__)

_grad_enabled: ContextVar[bool] = ContextVar("iqreward_grad_enabled", default=True)

# Additive score for masked attention / padding positions.
_MASK_NEG = 1e30
PROB_FLOOR = 1e-12


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording a graph (inference)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """A float64 array with an optional gradient and its recorded history."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data: Any, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            np.add(self.grad, grad, out=self.grad)

    def backward(self) -> None:
        """Back-propagate from this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


TensorLike = Union[Tensor, np.ndarray, Sequence[float], float]


def _topological_order(root: Tensor) -> list[Tensor]:
    # Iterative post-order DFS; graphs of long sequences exceed the recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _send(target: Tensor, grad: np.ndarray) -> None:
    if target.requires_grad:
        target.accumulate(grad)


def _ensure_grad(target: Tensor) -> np.ndarray:
    if target.grad is None:
        target.grad = np.zeros_like(target.data)
    return target.grad


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --- Elementwise ops ---


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")

    def backward(g: np.ndarray) -> None:
        _send(a, g)
        _send(b, g)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")

    def backward(g: np.ndarray) -> None:
        _send(a, g)
        _send(b, -g)

    return _node(a.data - b.data, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        _send(a, g * b.data)
        _send(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def one_minus(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def backward(g: np.ndarray) -> None:
        _send(a, -g)

    return _node(1.0 - a.data, (a,), backward)


def scale(a: TensorLike, factor: float) -> Tensor:
    a = as_tensor(a)

    def backward(g: np.ndarray) -> None:
        _send(a, g * factor)

    return _node(a.data * factor, (a,), backward)


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = expit(a.data)

    def backward(g: np.ndarray) -> None:
        _send(a, g * y * (1.0 - y))

    return _node(y, (a,), backward)


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def backward(g: np.ndarray) -> None:
        _send(a, g * (1.0 - y * y))

    return _node(y, (a,), backward)


def blend(new: TensorLike, old: TensorLike, mask: np.ndarray) -> Tensor:
    """``mask * new + (1 - mask) * old``; mask is a constant 0/1 array.

    With a 0/1 mask the selected operand passes through bit-exactly.
    """
    new, old = as_tensor(new), as_tensor(old)
    _same_shape(new, old, "blend")
    m = np.asarray(mask, dtype=np.float64)
    keep = 1.0 - m

    def backward(g: np.ndarray) -> None:
        _send(new, g * m)
        _send(old, g * keep)

    return _node(m * new.data + keep * old.data, (new, old), backward)


def dropout(x: TensorLike, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; the identity when not training or rate == 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(x, Tensor(keep))


# --- Shape and indexing ops ---


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of an empty list")
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        for part, piece in zip(parts, np.split(g, splits, axis=axis)):
            _send(part, piece)

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def stack(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("stack of an empty list")

    def backward(g: np.ndarray) -> None:
        for i, part in enumerate(parts):
            _send(part, np.take(g, i, axis=axis))

    return _node(np.stack([p.data for p in parts], axis=axis), tuple(parts), backward)


def reshape(x: TensorLike, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)

    def backward(g: np.ndarray) -> None:
        _send(x, g.reshape(x.shape))

    return _node(x.data.reshape(shape), (x,), backward)


def take_rows(x: TensorLike, index: np.ndarray) -> Tensor:
    """Row gather ``x[index]``; the embedding lookup is this op."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            np.add.at(_ensure_grad(x), idx, g)

    return _node(x.data[idx], (x,), backward)


def take_pairs(x: TensorLike, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather ``x[rows[i], cols[i]]`` from a (J, L, ...) tensor."""
    x = as_tensor(x)
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            np.add.at(_ensure_grad(x), (r, c), g)

    return _node(x.data[r, c], (x,), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        bad = int(idx[(idx < 0) | (idx >= vocab)].flat[0])
        raise ValueError(f"token id {bad} outside embedding table of {vocab} rows")
    return take_rows(weight, idx)


def tensor_sum(x: TensorLike) -> Tensor:
    x = as_tensor(x)

    def backward(g: np.ndarray) -> None:
        _send(x, np.broadcast_to(g, x.shape))

    return _node(np.asarray(x.data.sum()), (x,), backward)


# --- Linear algebra ---


def linear(x: TensorLike, weight: Tensor, bias: Optional[Tensor] = None, *, name: str = "weight") -> Tensor:
    """``x @ weight.T (+ bias)`` over the last axis of ``x``."""
    x = as_tensor(x)
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"parameter {name!r} has shape {weight.shape}, cannot apply to input of width {x.shape[-1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias for {name!r} has shape {bias.shape}, expected ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _send(x, g @ weight.data)
        g2 = g.reshape(-1, weight.shape[0])
        if weight.requires_grad:
            _send(weight, g2.T @ x.data.reshape(-1, weight.shape[1]))
        if bias is not None and bias.requires_grad:
            _send(bias, g2.sum(axis=0))

    return _node(out, parents, backward)


def dot_last(x: TensorLike, vector: Tensor, *, name: str = "vector") -> Tensor:
    """Contract the last axis of ``x`` with a vector."""
    x = as_tensor(x)
    if vector.data.ndim != 1 or x.shape[-1] != vector.shape[0]:
        raise ShapeError(f"parameter {name!r} has shape {vector.shape}, input width is {x.shape[-1]}")

    def backward(g: np.ndarray) -> None:
        ge = np.asarray(g)[..., None]
        _send(x, ge * vector.data)
        if vector.requires_grad:
            _send(vector, (ge * x.data).reshape(-1, vector.shape[0]).sum(axis=0))

    return _node(x.data @ vector.data, (x, vector), backward)


def masked_softmax(scores: TensorLike, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis; positions with mask 0 get probability 0."""
    s = as_tensor(scores)
    z = s.data if mask is None else s.data + (np.asarray(mask, dtype=np.float64) - 1.0) * _MASK_NEG
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        _send(s, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _node(y, (s,), backward)


def attend(weights: TensorLike, values: TensorLike) -> Tensor:
    """Weighted sum over positions: (..., K) x (..., K, D) -> (..., D)."""
    a, v = as_tensor(weights), as_tensor(values)
    if a.shape != v.shape[:-1]:
        raise ShapeError(f"attend: weights {a.shape} do not index values {v.shape}")

    def backward(g: np.ndarray) -> None:
        _send(a, np.einsum("...d,...kd->...k", g, v.data))
        _send(v, a.data[..., None] * np.asarray(g)[..., None, :])

    return _node(np.einsum("...k,...kd->...d", a.data, v.data), (a, v), backward)


def softmax_cross_entropy(logits: TensorLike, targets: np.ndarray) -> Tensor:
    """Fused softmax + summed cross-entropy over rows of (M, C) logits."""
    z = as_tensor(logits)
    data = z.data if z.data.ndim == 2 else z.data.reshape(1, -1)
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n_classes = data.shape[1]
    if t.shape[0] != data.shape[0]:
        raise ShapeError(f"{t.shape[0]} targets for {data.shape[0]} rows of logits")
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise ValueError(f"target class outside [0, {n_classes})")
    shifted = data - data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(data.shape[0])
    loss = -np.log(np.maximum(probs[rows, t], PROB_FLOOR)).sum()

    def backward(g: np.ndarray) -> None:
        grad = probs.copy()
        grad[rows, t] -= 1.0
        _send(z, (grad * g).reshape(z.shape))

    return _node(np.asarray(loss), (z,), backward)


# --- Plain numpy helpers ---


def softmax(logits: Any) -> np.ndarray:
    """Numerically stable softmax of a finite vector (max-subtraction)."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("softmax of an empty vector")
    if np.isnan(arr).any():
        raise ValueError("softmax input contains NaN")
    if not np.isfinite(arr).all():
        raise ValueError("softmax input must be finite")
    z = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(probs: Any, true_class: int) -> float:
    """``-ln probs[true_class]`` with the probability floored at 1e-12."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= true_class < p.shape[-1]:
        raise IndexError(f"class index {true_class} out of range for {p.shape[-1]} classes")
    return float(-np.log(max(float(p[true_class]), PROB_FLOOR)))


# --- Parameters ---


class ParameterSet(Mapping[str, Tensor]):
    """Named trainable tensors in deterministic insertion order."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._tensors: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(self.rng_seed)

    def add(self, name: str, shape: Sequence[int], *, init: str = "uniform", init_scale: float = 0.08) -> Tensor:
        """Create a parameter: uniform(-init_scale, init_scale) or zeros."""
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        dims = tuple(int(s) for s in shape)
        if not dims or any(s <= 0 for s in dims):
            raise ShapeError(f"parameter {name!r} needs positive dimensions, got {dims}")
        if init == "uniform":
            data = self._rng.uniform(-init_scale, init_scale, size=dims)
        elif init == "zeros":
            data = np.zeros(dims)
        else:
            raise ValueError(f"unknown init {init!r}")
        tensor = Tensor(data, requires_grad=True)
        self._tensors[name] = tensor
        return tensor

    def adopt(self, name: str, value: np.ndarray) -> Tensor:
        """Register a parameter with explicit contents."""
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        tensor = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True)
        self._tensors[name] = tensor
        return tensor

    def assign(self, name: str, value: np.ndarray) -> None:
        """Overwrite an existing parameter's values in place."""
        tensor = self[name]
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != tensor.shape:
            raise ShapeError(f"parameter {name!r} has shape {tensor.shape}, got {arr.shape}")
        tensor.data[...] = arr

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: t.grad if t.grad is not None else np.zeros_like(t.data)
            for name, t in self._tensors.items()
        }

    def num_elements(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def copy(self) -> "ParameterSet":
        clone = ParameterSet(self.rng_seed)
        for name, tensor in self._tensors.items():
            clone.adopt(name, tensor.data)
        return clone


def init_gru(params: ParameterSet, prefix: str, input_dim: int, hidden: int, init_scale: float = 0.08) -> None:
    """Add update/reset/candidate gate weights for one GRU under ``prefix``."""
    for gate in ("z", "r", "h"):
        params.add(f"{prefix}W_{gate}", (hidden, input_dim), init_scale=init_scale)
        params.add(f"{prefix}U_{gate}", (hidden, hidden), init_scale=init_scale)
        params.add(f"{prefix}b_{gate}", (hidden,), init="zeros")


def gru_cell_forward(x: TensorLike, h_prev: TensorLike, params: Mapping[str, Tensor], prefix: str = "") -> Tensor:
    """One GRU step: h' = (1 - z) * h_prev + z * candidate."""
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    w = {key: params[f"{prefix}{key}"] for key in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")}
    hidden = w["U_z"].shape[0]
    if h_prev.shape[-1] != hidden:
        raise ShapeError(
            f"parameter {prefix}U_z has shape {w['U_z'].shape}, hidden state has width {h_prev.shape[-1]}"
        )

    def gate(key: str, recurrent: Tensor) -> Tensor:
        return add(
            linear(x, w[f"W_{key}"], w[f"b_{key}"], name=f"{prefix}W_{key}"),
            linear(recurrent, w[f"U_{key}"], name=f"{prefix}U_{key}"),
        )

    z = sigmoid(gate("z", h_prev))
    r = sigmoid(gate("r", h_prev))
    candidate = tanh(gate("h", mul(r, h_prev)))
    return add(mul(one_minus(z), h_prev), mul(z, candidate))


def run_gru(
    inputs: Sequence[TensorLike],
    params: Mapping[str, Tensor],
    prefix: str,
    mask: Optional[np.ndarray] = None,
    reverse: bool = False,
) -> list[Tensor]:
    """Unroll a GRU from a zero state; masked steps carry the state through."""
    steps = [as_tensor(x) for x in inputs]
    hidden = params[f"{prefix}U_z"].shape[0]
    h = Tensor(np.zeros(steps[0].shape[:-1] + (hidden,)))
    states: list[Optional[Tensor]] = [None] * len(steps)
    order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
    for k in order:
        h_new = gru_cell_forward(steps[k], h, params, prefix)
        h = h_new if mask is None else blend(h_new, h, mask[:, k : k + 1])
        states[k] = h
    return states  # type: ignore[return-value]


def bigru_sequence(
    inputs: Sequence[TensorLike],
    params: Mapping[str, Tensor],
    forward_prefix: str = "fwd.",
    backward_prefix: str = "bwd.",
    mask: Optional[np.ndarray] = None,
) -> list[Tensor]:
    """Position k -> [forward state after 1..k, backward state after K..k]."""
    if len(inputs) == 0:
        raise ValueError("bigru_sequence needs at least one input")
    forward = run_gru(inputs, params, forward_prefix, mask)
    backward = run_gru(inputs, params, backward_prefix, mask, reverse=True)
    return [concat([f, b]) for f, b in zip(forward, backward)]


# --- Optimiser ---


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``."""
    grads = [t.grad for t in params.values() if t.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


def adam_step(
    params: ParameterSet,
    grads: Optional[Mapping[str, np.ndarray]],
    state: AdamState,
) -> tuple[ParameterSet, AdamState]:
    """Bias-corrected Adam update, in place."""
    grads = params.grads() if grads is None else grads
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, tensor in params.items():
        g = grads.get(name)
        g = np.zeros_like(tensor.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != tensor.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter is {tensor.shape}")
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        tensor.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


# --- Serialization ---
#
# Container layout (all integers little-endian):
#   magic        4 bytes  b"IQRP"
#   version      uint32   PARAMS_FORMAT_VERSION
#   header_len   uint32
#   header       header_len bytes of UTF-8 JSON (sorted keys, includes rng_seed)
#   count        uint32
#   count times:
#     name_len   uint16, name UTF-8
#     ndim       uint8,  dims uint32 * ndim
#     data       float64 little-endian, row-major, prod(dims) values

PARAMS_MAGIC = b"IQRP"
PARAMS_FORMAT_VERSION = 1


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw = raw
        self.offset = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.raw):
            raise CorruptFileError(f"{self.source}: truncated at byte {self.offset} (needed {n} more)")
        chunk = self.raw[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def remaining(self) -> int:
        return len(self.raw) - self.offset


def save_parameters(path: str | Path, params: ParameterSet, header: Optional[dict[str, Any]] = None) -> None:
    head = dict(header or {})
    head["rng_seed"] = params.rng_seed
    head_bytes = json.dumps(head, sort_keys=True).encode("utf-8")
    chunks = [PARAMS_MAGIC, struct.pack("<II", PARAMS_FORMAT_VERSION, len(head_bytes)), head_bytes]
    chunks.append(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", tensor.data.ndim))
        chunks.append(struct.pack(f"<{tensor.data.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_parameters(path: str | Path) -> tuple[ParameterSet, dict[str, Any]]:
    source = str(path)
    reader = _Reader(Path(path).read_bytes(), source)
    if reader.take(4) != PARAMS_MAGIC:
        raise CorruptFileError(f"{source}: not a parameter container")
    version, head_len = reader.unpack("<II")
    if version != PARAMS_FORMAT_VERSION:
        raise VersionMismatchError(
            f"{source}: format version {version}, this build reads {PARAMS_FORMAT_VERSION}"
        )
    try:
        header = json.loads(reader.take(head_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{source}: unreadable header ({exc})") from exc
    if not isinstance(header, dict):
        raise CorruptFileError(f"{source}: header is not a JSON object")
    (count,) = reader.unpack("<I")
    params = ParameterSet(rng_seed=int(header.get("rng_seed", 0)))
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8", errors="strict")
        except UnicodeDecodeError as exc:
            raise CorruptFileError(f"{source}: undecodable parameter name ({exc})") from exc
        if name in params:
            raise CorruptFileError(f"{source}: duplicate parameter {name!r}")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(reader.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        params.adopt(name, data)
    if reader.remaining:
        raise CorruptFileError(f"{source}: {reader.remaining} trailing bytes")
    logger.debug("loaded %d parameters from %s", len(params), source)
    return params, header
