"""Autocorrelation-method linear prediction.

Sign convention: the predictor is ``u[t] = sum_m a[m] * s[t - m]`` for
``m = 1..M`` and the excitation is ``e[t] = s[t] - u[t]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

LPC_ORDER = 16
SILENCE_ENERGY = 1e-12


@dataclass(frozen=True)
class LpcCoeffs:
    a: np.ndarray
    reflection: np.ndarray = field(default_factory=lambda: np.zeros(0))
    error: float = 0.0
    silent: bool = False

    @property
    def order(self) -> int:
        return len(self.a)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.reflection) < 1.0))


def autocorrelate(window, max_lag: int) -> np.ndarray:
    """``r[k] = sum_n x[n] x[n+k]`` for ``k = 0..max_lag``."""
    x = np.asarray(window, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty window")
    if not 0 <= max_lag < x.size:
        raise ValueError(f"max_lag {max_lag} must be below window length {x.size}")
    n = x.size
    return np.array([np.dot(x[: n - k], x[k:]) for k in range(max_lag + 1)])


def levinson_durbin(r, order: int = LPC_ORDER) -> LpcCoeffs:
    """Solve the Toeplitz normal equations ``R a = r[1:order+1]`` recursively.

    A frame with ``r[0] <= 1e-12`` is treated as silence: zero predictor,
    ``silent=True``.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.size < order + 1:
        raise ValueError(f"need {order + 1} autocorrelation lags, got {r.size}")
    if r[0] <= SILENCE_ENERGY:
        return LpcCoeffs(np.zeros(order), np.zeros(order), 0.0, silent=True)
    a = np.zeros(order)
    k = np.zeros(order)
    err = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        ki = acc / err
        a[:i] = a[:i] - ki * a[:i][::-1]
        a[i] = ki
        k[i] = ki
        err *= 1.0 - ki * ki
    return LpcCoeffs(a, k, float(err))


def lpc_predict(history, coeffs) -> float:
    """Prediction from the last ``M`` samples given oldest first."""
    a = coeffs.a if isinstance(coeffs, LpcCoeffs) else np.asarray(coeffs, dtype=np.float64)
    history = np.asarray(history, dtype=np.float64)
    if history.shape != a.shape:
        raise ValueError(f"history length {history.size} != order {a.size}")
    return float(np.dot(a, history[::-1]))


def excitation(sample, prediction):
    return np.asarray(sample) - np.asarray(prediction)


def lpc_prediction_signal(signal, a, zi=None):
    """Vectorised ``u[t]`` for a whole block with fixed coefficients.

    ``zi`` optionally holds the ``M`` samples preceding the block (oldest first).
    """
    s = np.asarray(signal, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    M = a.size
    past = np.zeros(M) if zi is None else np.asarray(zi, dtype=np.float64)
    padded = np.concatenate([past, s])
    u = lfilter(np.concatenate([[0.0], a]), [1.0], padded)
    return u[M:]
