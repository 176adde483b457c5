"""Adam and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, NonFiniteError, Tensor


class TrainingDiverged(FloatingPointError):
    """Loss or gradient went non-finite; ``last_good`` holds the model before the failing step."""

    def __init__(self, message: str, last_good, history):
        super().__init__(message)
        self.last_good = last_good
        self.history = history

    def __reduce__(self):
        # keep the payload when the error crosses a process boundary
        return type(self), (self.args[0], self.last_good, self.history)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float = 1e-3
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays and mutates ``state``."""
    if state.step_count < 0:
        raise ValueError("step_count must be non-negative")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=DTYPE) for p in params]
        state.v = [np.zeros_like(p, dtype=DTYPE) for p in params]
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_gradients(grads: list[np.ndarray], threshold: float) -> list[np.ndarray]:
    """Rescale ``grads`` so their joint L2 norm is at most ``threshold``."""
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NonFiniteError("non-finite gradient norm")
    if norm <= threshold:
        return [np.array(g, copy=True) for g in grads]
    scale = threshold / norm
    return [g * scale for g in grads]


class Adam:
    """Adam bound to a list of trainable tensors, with optional clipping."""

    def __init__(self, params: list[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip: float | None = None):
        self.params = params
        self.state = AdamState(beta1=betas[0], beta2=betas[1], lr=lr, eps=eps)
        self.clip = clip

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad`` fields; returns the pre-clip norm."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = global_norm(grads)
        if not np.isfinite(norm):
            raise NonFiniteError("non-finite gradient norm")
        if self.clip is not None:
            grads = clip_gradients(grads, self.clip)
        new = adam_step([p.data for p in self.params], grads, self.state)
        for p, d in zip(self.params, new):
            p.data = d
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
