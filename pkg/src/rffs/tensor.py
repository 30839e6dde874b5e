"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation in the network is expressed with the
functions in this module.  Operations are recorded on the innermost active
:class:`Tape` whenever one of their inputs requires a gradient; outside a
tape they run as plain numpy code.

>>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = sum_all(x)
>>> tape.backward(loss)[0].tolist()
[1.0, 1.0, 1.0]
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


class Tensor:
    """A dense row-major array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0 or 0 in arr.shape:
            raise ValueError("tensor dimensions must be >= 1")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr if arr.ndim else arr.reshape(1)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name, dtype=dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so inputs always precede the
    outputs that consume them and a reverse sweep is a valid topological
    order.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def record(self, inputs, output, backward) -> None:
        self.nodes.append(_Node(tuple(inputs), output, backward))

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None) -> list[np.ndarray]:
        """Sweep the tape in reverse from a scalar ``loss``.

        Gradients accumulate additively into ``.grad`` of every tensor that
        requires one.  Returns gradients for ``params`` (zeros for parameters
        the loss does not depend on); ``params`` defaults to all leaf tensors
        requiring gradients, in first-use order.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(n.output) for n in self.nodes}
        leaves: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and id(t) not in produced:
                    leaves.setdefault(id(t), t)
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            t.grad = g.astype(t.dtype, copy=False) if t.grad is None else t.grad + g
        if params is None:
            params = list(leaves.values())
        out = []
        for p in params:
            g = grads.get(id(p))
            out.append(np.zeros_like(p.data) if g is None else g.astype(p.dtype, copy=False))
        return out


def _active_tape(*inputs: Tensor) -> Tape | None:
    tapes = _stack()
    if tapes and any(t.requires_grad for t in inputs):
        return tapes[-1]
    return None


def _result(arr: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = _active_tape(*inputs)
    out = Tensor._wrap(arr, requires_grad=tape is not None)
    if tape is not None:
        tape.record(inputs, out, backward)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    return a, b


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the gradient at exactly 0 is 0."""
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


# -- linear algebra ----------------------------------------------------------

def matmul(x: Tensor, w: Tensor) -> Tensor:
    """``x[..., C_in] @ w[C_in, C_out]``."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"shape mismatch: {x.shape} @ {w.shape}")
    out = x.data @ w.data

    def backward(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1])
        return gx, gw

    return _result(out, (x, w), backward)


@dataclass
class LinearParams:
    weight: Tensor  # [C_in, C_out]
    bias: Tensor  # [C_out]

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator, name: str = "", dtype=DEFAULT_DTYPE):
        # He-uniform for the ReLU stacks used throughout
        bound = np.sqrt(6.0 / c_in)
        w = rng.uniform(-bound, bound, size=(c_in, c_out))
        return cls(Tensor(w, requires_grad=True, name=f"{name}.weight", dtype=dtype),
                   Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias", dtype=dtype))

    @property
    def c_in(self) -> int:
        return self.weight.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """``x @ W + b`` applied over the last axis."""
    if x.shape[-1] != p.c_in:
        raise ValueError(f"linear expects {p.c_in} input columns, got {x.shape[-1]}")
    return add(matmul(x, p.weight), p.bias)


# -- structural --------------------------------------------------------------

def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (the channel axis by default)."""
    xs = list(xs)
    if not xs:
        raise ValueError("concat needs at least one tensor")
    if len(xs) == 1:
        return xs[0]
    lead = [x.shape[:axis] if axis != -1 else x.shape[:-1] for x in xs]
    if any(s != lead[0] for s in lead):
        raise ValueError(f"row-count mismatch in concat: {[x.shape for x in xs]}")
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return _result(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


concat_features = concat


def slice_axis(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _result(x.data[index], (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def _scatter_rows(g: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    flat = idx.reshape(-1)
    g2 = g.reshape(flat.size, -1)
    out = np.zeros((n, g2.shape[1]), dtype=g.dtype)
    np.add.at(out, flat, g2)
    return out.reshape((n,) + g.shape[idx.ndim:])


def gather_rows(x: Tensor, idx) -> Tensor:
    """``out[i] = x[idx[i]]`` for an index array of any shape."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("gather indices must be integers")
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather index out of range [0, {n})")
    return _result(x.data[idx], (x,), lambda g: (_scatter_rows(g, idx, n),))


def max_over_neighbors(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """Max over axis 1 of an ``[N, K, C]`` tensor.

    Returns the pooled ``[N, C]`` tensor and the ``[N, C]`` argmax; ties go
    to the first neighbor.
    """
    if x.data.ndim != 3:
        raise ValueError(f"expected [N, K, C], got {x.shape}")
    if x.shape[1] == 0:
        raise ValueError("max over zero neighbors")
    arg = np.argmax(x.data, axis=1)
    out = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg[:, None, :], g[:, None, :], axis=1)
        return (full,)

    return _result(out, (x,), backward), arg


def weighted_neighbor_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """``out[n] = sum_k weights[n, k] * x[n, k]`` with constant weights."""
    w = np.asarray(weights, dtype=x.dtype)[:, :, None]
    return _result((x.data * w).sum(axis=1), (x,), lambda g: (g[:, None, :] * w,))


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum(), dtype=x.dtype).reshape(1), (x,),
                   lambda g: (np.broadcast_to(g.reshape(()), x.shape).astype(x.dtype),))


def mean_all(x: Tensor) -> Tensor:
    return mul(sum_all(x), 1.0 / x.data.size)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_pair(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stable ``log S`` and ``log(1 - S)`` for ``S = softmax(logits)``."""
    lse = np.logaddexp.reduce(logits, axis=-1, keepdims=True)
    log_s = logits - lse
    c = logits.shape[-1]
    if c == 1:
        return log_s, np.full_like(log_s, -np.inf)
    # log of the sum over the other classes, computed without cancellation
    log_rest = np.empty_like(logits)
    for k in range(c):
        others = np.delete(logits, k, axis=-1)
        log_rest[..., k] = np.logaddexp.reduce(others, axis=-1)
    return log_s, log_rest - lse


def softmax_bce(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Per-class binary cross-entropy on softmax scores against one-hot labels.

    Per point: ``-sum_c [a_c log s_c + (1 - a_c) log(1 - s_c)]`` with
    ``s = softmax(logits)`` and ``a`` the one-hot label.  ``reduction`` is
    ``"mean"`` (over points) or ``"sum"``.
    """
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    if not np.all(np.isfinite(logits.data)):
        raise FloatingPointError("non-finite logits")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    z = logits.data.astype(np.float64)
    log_s, log_1ms = log_softmax_pair(z)
    onehot = np.zeros_like(z)
    onehot[np.arange(n), labels] = 1.0
    # 0 * log 0 := 0 on both branches
    pos = np.where(onehot > 0, log_s, 0.0)
    neg = np.where(onehot > 0, 0.0, log_1ms)
    per_point = -(pos + neg).sum(axis=1)
    scale = 1.0 / n if reduction == "mean" else 1.0
    total = per_point.sum() * scale

    def backward(g):
        s = np.exp(log_s)
        # u_c = dL/dS_c * S_c ; then dL/dz_k = u_k - S_k * sum_c u_c
        u = np.where(onehot > 0, -1.0, np.exp(log_s - log_1ms))
        gz = (u - s * u.sum(axis=1, keepdims=True)) * (scale * float(g.reshape(-1)[0]))
        return (gz.astype(logits.dtype),)

    return _result(np.asarray(total, dtype=logits.dtype).reshape(1), (logits,), backward)
