"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Tensors are rank <= 2 (a leading batch axis plus one feature axis at most)
and always float64.  Every operation records its inputs and a closure that
maps the output gradient onto input gradients; ``backward`` walks the
recorded DAG in reverse topological order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

PROB_FLOOR = 1e-7


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf"):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeError(f"{op}: rank {value.ndim} tensors are not supported")
        if not np.isfinite(value).all():
            raise NumericError(f"{op}: non-finite value")
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(value, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# element-wise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), grad_fn, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value

    def grad_fn(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _node(av * bv, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NumericError("div: division by zero")
    out = av / bv

    def grad_fn(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)

    return _node(out, (a, b), grad_fn, "div")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0  # subgradient at 0 is 0
    return _node(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise NumericError("log: non-positive argument")
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def log1p(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= -1):
        raise NumericError("log1p: argument <= -1")
    return _node(np.log1p(a.value), (a,), lambda g: (g / (1.0 + a.value),), "log1p")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix/vector product with ``np.matmul`` semantics for rank 1 and 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim == 0 or b.value.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.value, b.value

    def grad_fn(g):
        a2 = av if av.ndim == 2 else av[None, :]
        b2 = bv if bv.ndim == 2 else bv[:, None]
        g2 = np.reshape(g, (a2.shape[0], b2.shape[1]))
        ga = (g2 @ b2.T).reshape(av.shape)
        gb = (a2.T @ g2).reshape(bv.shape)
        return ga, gb

    return _node(av @ bv, (a, b), grad_fn, "matmul")


def linear(x, w) -> Tensor:
    """``x @ w.T``: applies a (out, in) weight matrix to a batch of rows."""
    x, w = as_tensor(x), as_tensor(w)
    if w.value.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    xv, wv = x.value, w.value

    def grad_fn(g):
        gx = g @ wv
        gw = (g[:, None] * xv[None, :]) if xv.ndim == 1 else g.T @ xv
        return gx, gw

    return _node(xv @ wv.T, (x, w), grad_fn, "linear")


def diag(v) -> Tensor:
    """Embed a vector as the diagonal of a square matrix."""
    v = as_tensor(v)
    if v.value.ndim != 1:
        raise ShapeError(f"diag: expected a vector, got shape {v.shape}")
    return _node(np.diag(v.value), (v,), lambda g: (np.diagonal(g).copy(),), "diag")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return np.split(g, bounds, axis=axis)

    return _node(out, tensors, grad_fn, "concat")


def reduce_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    shape = a.shape
    return _node(a.value.mean(), (a,), lambda g: (np.full(shape, g / n),), "mean")


# ---------------------------------------------------------------------------
# probabilistic heads


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (a,), grad_fn, "softmax")


def cross_entropy(probs, y) -> Tensor:
    """Mean negative log-likelihood of integer targets under probability rows.

    Probabilities are clamped to ``[1e-7, 1]`` first; the clamp passes no
    gradient where it is active.
    """
    probs = as_tensor(probs)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    pv = probs.value if probs.value.ndim == 2 else probs.value[None, :]
    if pv.shape[0] != y.shape[0]:
        raise ShapeError(f"cross_entropy: {pv.shape[0]} rows but {y.shape[0]} targets")
    if y.min(initial=0) < 0 or y.max(initial=0) >= pv.shape[1]:
        raise ShapeError("cross_entropy: target class out of range")
    rows = np.arange(y.shape[0])
    picked = pv[rows, y]
    clamped = np.clip(picked, PROB_FLOOR, 1.0)
    n = y.shape[0]
    loss = -np.log(clamped).mean()

    def grad_fn(g):
        gp = np.zeros_like(pv)
        live = (picked >= PROB_FLOOR) & (picked <= 1.0)
        gp[rows, y] = np.where(live, -g / (n * clamped), 0.0)
        return (gp.reshape(probs.shape),)

    return _node(loss, (probs,), grad_fn, "cross_entropy")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return _node(x.value * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# reverse pass


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# optimisation


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Adam:
    """Adam with bias correction (Kingma & Ba defaults)."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericError("diverged: non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all integers little-endian):
#   magic b"RFCKPT1\n"
#   u64 manifest length, manifest as UTF-8 JSON with sorted keys
#   u32 tensor count, then per tensor:
#     u32 name length, name, u32 rank, u64 * rank shape, '<f8' data (C order)

_MAGIC = b"RFCKPT1\n"


def save_checkpoint(path, tensors: dict[str, np.ndarray], manifest: dict) -> None:
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, struct.pack("<Q", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(_MAGIC)
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    manifest = json.loads(data[pos:pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + ln].decode("utf-8")
        pos += ln
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        tensors[name] = arr.astype(np.float64)
    return tensors, manifest
