"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` records the operation that produced it together with a closure
that pushes its gradient back to its parents. ``Tensor.backward`` walks the
graph in reverse topological order. Only the operations the codec networks
need are provided; heavy recurrent work goes through fused primitives in
:mod:`pnsc.nn.functional`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Sum out the axes that numpy broadcasting created or stretched.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=DTYPE)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        name: str = "",
    ):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor; a scalar seeds with 1."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            if not np.isfinite(self.data).all():
                raise NonFiniteError(f"non-finite loss {self.data!r}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): _as_array(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(ensure(other)))

    def __rsub__(self, other) -> "Tensor":
        return add(ensure(other), neg(self))

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return tmean(self, axis)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def ensure(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires, parents if requires else (), backward if requires else None)


def add(a, b) -> Tensor:
    a, b = ensure(a), ensure(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = ensure(a), ensure(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(a.data**exponent, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = ensure(a), ensure(b)

    def backward(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        if a.ndim == 1:
            return b.data @ g, np.outer(a.data, g)
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward)


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def tsum(a: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), backward)


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # Two-branch form avoids overflow in exp for large |x|.
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid_array(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_array(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(a)), stable for any magnitude of a."""
    s = sigmoid_array(a.data)
    return _make(log_sigmoid_array(a.data), (a,), lambda g: (g * (1.0 - s),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [ensure(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            out.append(g[tuple(index)])
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[indices]`` with scatter-add backward."""
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, indices.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _make(table.data[indices], (table,), backward)


def repeat_frames(a: Tensor, repeats: int, axis: int) -> Tensor:
    """Repeat every entry ``repeats`` times along ``axis`` (frame to sample rate)."""

    def backward(g):
        shape = list(g.shape)
        shape[axis : axis + 1] = [a.shape[axis], repeats]
        return (g.reshape(shape).sum(axis=axis + 1),)

    return _make(np.repeat(a.data, repeats, axis=axis), (a,), backward)
