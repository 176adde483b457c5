"""Parameterised layers and parameter accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import DTYPE, Tensor, take_rows


@dataclass(frozen=True)
class LayerSpec:
    """Manifest entry: layer kind plus the dimensions that fix its shapes."""

    kind: str  # "dense" | "gru" | "embedding"
    name: str
    dims: tuple[int, ...]

    def shapes(self) -> list[tuple[int, ...]]:
        if self.kind == "dense":
            n_in, n_out = self.dims
            return [(n_out, n_in), (n_out,)]
        if self.kind == "gru":
            n_in, hidden = self.dims
            return [(3 * hidden, n_in), (3 * hidden, hidden), (3 * hidden,)]
        if self.kind == "embedding":
            n_codes, dim = self.dims
            return [(n_codes, dim)]
        raise ValueError(f"unknown layer kind {self.kind!r}")


def param_count(layers) -> int:
    """Exact number of scalar parameters in a list of :class:`LayerSpec` (or a module)."""
    if hasattr(layers, "manifest"):
        layers = layers.manifest()
    return sum(int(np.prod(shape)) for spec in layers for shape in spec.shapes())


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Layer:
    spec: LayerSpec

    def parameters(self) -> list[Tensor]:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, activation: str = "none", rng=None, name: str = "dense"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = LayerSpec("dense", name, (n_in, n_out))
        self.activation = activation
        self.W = _uniform(rng, (n_out, n_in), n_in)
        self.b = Tensor(np.zeros(n_out, dtype=DTYPE), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return F.dense_forward(x, self.W, self.b, self.activation)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


class GRU(Layer):
    """Single GRU layer; weights stacked in z, r, h gate order."""

    def __init__(self, n_in: int, hidden: int, rng=None, name: str = "gru"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = LayerSpec("gru", name, (n_in, hidden))
        self.hidden = hidden
        self.W = _uniform(rng, (3 * hidden, n_in), n_in)
        self.U = _uniform(rng, (3 * hidden, hidden), hidden)
        self.b = Tensor(np.zeros(3 * hidden, dtype=DTYPE), requires_grad=True)

    def step(self, x, h) -> Tensor:
        return F.gru_step(x, h, self.W, self.U, self.b)

    def __call__(self, x, h0=None) -> Tensor:
        return F.gru_sequence(x, self.W, self.U, self.b, h0)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.U, self.b]

    # Gate views, mostly for inspection and tests.
    def gate(self, which: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = "zrh".index(which)
        sl = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.W.data[sl], self.U.data[sl], self.b.data[sl]


class Embedding(Layer):
    def __init__(self, n_codes: int, dim: int, rng=None, name: str = "embedding"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = LayerSpec("embedding", name, (n_codes, dim))
        self.table = _uniform(rng, (n_codes, dim), dim)

    def __call__(self, codes) -> Tensor:
        return take_rows(self.table, codes)

    def parameters(self) -> list[Tensor]:
        return [self.table]


class Module:
    """A named, ordered collection of layers."""

    kind = "module"

    def layers(self) -> list[Layer]:
        raise NotImplementedError

    def manifest(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers()]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers() for p in layer.parameters()]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for layer in self.layers():
            for i, p in enumerate(layer.parameters()):
                yield f"{layer.spec.name}.{i}", p

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def load_arrays(self, arrays) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("parameter list length mismatch")
        for p, a in zip(params, arrays):
            if p.data.shape != np.shape(a):
                raise ValueError(f"shape mismatch {p.data.shape} vs {np.shape(a)}")
            p.data = np.array(a, dtype=DTYPE, copy=True)

    def param_count(self) -> int:
        return param_count(self.manifest())
