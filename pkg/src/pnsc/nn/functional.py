"""Layer-level operations built on :class:`~pnsc.nn.tensor.Tensor`.

GRU gate convention used everywhere in the package::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~

Gate weights are stored stacked in z, r, h order: ``W`` is ``(3H, I)``,
``U`` is ``(3H, H)`` and ``b`` is ``(3H,)``.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    DTYPE,
    Tensor,
    _make,
    concat,
    ensure,
    sigmoid,
    sigmoid_array,
    softmax,
    tanh,
)

ACTIVATIONS = ("none", "sigmoid", "tanh", "softmax")


class ContractError(ValueError):
    """Inputs violate a shape or domain precondition."""


def _check_gru(x_dim: int, h_dim: int, W: Tensor, U: Tensor, b: Tensor) -> None:
    hidden = U.shape[1]
    if W.shape != (3 * hidden, x_dim):
        raise ContractError(f"W has shape {W.shape}, expected {(3 * hidden, x_dim)}")
    if U.shape != (3 * hidden, hidden) or b.shape != (3 * hidden,):
        raise ContractError("recurrent weights or bias do not match hidden size")
    if h_dim != hidden:
        raise ContractError(f"hidden state has size {h_dim}, expected {hidden}")


def gru_step(x, h_prev, W, U, b) -> Tensor:
    """One GRU update composed from primitive ops (differentiable in every input)."""
    x, h_prev, W, U, b = (ensure(v) for v in (x, h_prev, W, U, b))
    _check_gru(x.shape[-1], h_prev.shape[-1], W, U, b)
    H = U.shape[1]
    xp = x @ W.T + b
    hz = h_prev @ _rows(U, 0, 2 * H).T
    z = sigmoid(_cols(xp, 0, H) + _cols(hz, 0, H))
    r = sigmoid(_cols(xp, H, 2 * H) + _cols(hz, H, 2 * H))
    cand = tanh(_cols(xp, 2 * H, 3 * H) + (r * h_prev) @ _rows(U, 2 * H, 3 * H).T)
    return (1.0 - z) * h_prev + z * cand


def _rows(t: Tensor, lo: int, hi: int) -> Tensor:
    def backward(g):
        out = np.zeros_like(t.data)
        out[lo:hi] = g
        return (out,)

    return _make(t.data[lo:hi], (t,), backward)


def _cols(t: Tensor, lo: int, hi: int) -> Tensor:
    def backward(g):
        out = np.zeros_like(t.data)
        out[..., lo:hi] = g
        return (out,)

    return _make(t.data[..., lo:hi], (t,), backward)


def gru_step_array(x: np.ndarray, h: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Graph-free GRU step for inference loops."""
    H = U.shape[1]
    xp = W @ x + b
    hz = U[: 2 * H] @ h
    z = sigmoid_array(xp[:H] + hz[:H])
    r = sigmoid_array(xp[H : 2 * H] + hz[H:])
    cand = np.tanh(xp[2 * H :] + U[2 * H :] @ (r * h))
    return (1.0 - z) * h + z * cand


def gru_sequence(x, W, U, b, h0=None) -> Tensor:
    """Run a GRU over ``x`` of shape ``(B, T, I)``; returns all states ``(B, T, H)``.

    Fused forward/backward (truncated at the sequence start): the input
    projection is batched over time and only the recurrence is looped.
    """
    x, W, U, b = (ensure(v) for v in (x, W, U, b))
    B, T, _ = x.shape
    H = U.shape[1]
    h_init = np.zeros((B, H), dtype=DTYPE) if h0 is None else np.asarray(ensure(h0).data, dtype=DTYPE)
    _check_gru(x.shape[-1], h_init.shape[-1], W, U, b)
    Uzr_T = U.data[: 2 * H].T.copy()
    Uh_T = U.data[2 * H :].T.copy()
    xp = x.data @ W.data.T + b.data
    states = np.empty((B, T, H), dtype=DTYPE)
    prev = np.empty((B, T, H), dtype=DTYPE)
    zs = np.empty((B, T, H), dtype=DTYPE)
    rs = np.empty((B, T, H), dtype=DTYPE)
    cands = np.empty((B, T, H), dtype=DTYPE)
    h = h_init
    for t in range(T):
        xt = xp[:, t]
        hz = h @ Uzr_T
        z = sigmoid_array(xt[:, :H] + hz[:, :H])
        r = sigmoid_array(xt[:, H : 2 * H] + hz[:, H:])
        cand = np.tanh(xt[:, 2 * H :] + (r * h) @ Uh_T)
        prev[:, t] = h
        zs[:, t] = z
        rs[:, t] = r
        cands[:, t] = cand
        h = h + z * (cand - h)
        states[:, t] = h

    def backward(g):
        Uz, Ur, Uh = U.data[:H], U.data[H : 2 * H], U.data[2 * H :]
        dpre = np.empty((B, T, 3 * H), dtype=DTYPE)
        carry = np.zeros((B, H), dtype=DTYPE)
        for t in range(T - 1, -1, -1):
            dh = g[:, t] + carry
            z, r, cand, hp = zs[:, t], rs[:, t], cands[:, t], prev[:, t]
            da_h = dh * z * (1.0 - cand * cand)
            drh = da_h @ Uh
            da_z = dh * (cand - hp) * z * (1.0 - z)
            da_r = drh * hp * r * (1.0 - r)
            carry = dh * (1.0 - z) + drh * r + da_z @ Uz + da_r @ Ur
            dpre[:, t, :H] = da_z
            dpre[:, t, H : 2 * H] = da_r
            dpre[:, t, 2 * H :] = da_h
        flat = dpre.reshape(B * T, 3 * H)
        dW = flat.T @ x.data.reshape(B * T, -1)
        db = flat.sum(axis=0)
        dU = np.empty_like(U.data)
        dU[: 2 * H] = flat[:, : 2 * H].T @ prev.reshape(B * T, H)
        dU[2 * H :] = flat[:, 2 * H :].T @ (rs * prev).reshape(B * T, H)
        dx = dpre @ W.data
        return dx, dW, dU, db

    return _make(states, (x, W, U, b), backward)


def dense_forward(x, W, b, activation: str = "none") -> Tensor:
    """``activation(x @ W.T + b)`` with ``W`` of shape ``(out, in)``."""
    x, W, b = ensure(x), ensure(W), ensure(b)
    if activation not in ACTIVATIONS:
        raise ContractError(f"unknown activation {activation!r}")
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ContractError(f"dense shapes x={x.shape} W={W.shape} b={b.shape} are inconsistent")
    y = x @ W.T + b
    if activation == "sigmoid":
        return sigmoid(y)
    if activation == "tanh":
        return tanh(y)
    if activation == "softmax":
        return softmax(y)
    return y


def cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``.

    ``logits`` has shape ``(..., K)``; the result is in nats per element.
    """
    logits = ensure(logits)
    targets = np.asarray(targets, dtype=np.int64)
    K = logits.shape[-1]
    flat = logits.data.reshape(-1, K)
    idx = targets.reshape(-1)
    if flat.shape[0] != idx.shape[0]:
        raise ContractError("targets do not match logits")
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    logp_target = shifted[np.arange(idx.size), idx] - lse
    n = idx.size
    loss = -logp_target.mean()

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[np.arange(n), idx] -= 1.0
        return ((g / n) * p.reshape(logits.shape),)

    return _make(loss, (logits,), backward)


def log_softmax_array(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


__all__ = [
    "ContractError",
    "concat",
    "cross_entropy",
    "dense_forward",
    "gru_sequence",
    "gru_step",
    "gru_step_array",
    "log_softmax_array",
]
