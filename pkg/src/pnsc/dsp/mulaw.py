"""8-bit mu-law companding (mu = 255) with code 128 as the zero level.

Codes map to companded values ``y = (code - 128) / 128``, so code 0 decodes
to exactly -1, code 128 to exactly 0 and code 255 to ``y = 127/128``.
"""

from __future__ import annotations

import numpy as np

MU = 255.0
N_CODES = 256
CENTER = 128
_LOG1P_MU = np.log1p(MU)


def mulaw_compress(x):
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return np.sign(x) * np.log1p(MU * np.abs(x)) / _LOG1P_MU


def mulaw_expand(y):
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.expm1(np.abs(y) * _LOG1P_MU) / MU


def mulaw_encode(x):
    """Quantize amplitudes to integer codes 0..255 (inputs clamped to [-1, 1])."""
    y = mulaw_compress(x)
    codes = np.clip(np.round(y * CENTER) + CENTER, 0, N_CODES - 1)
    return codes.astype(np.int64)


def mulaw_decode(codes):
    codes = np.asarray(codes)
    if np.any((codes < 0) | (codes >= N_CODES)):
        raise ValueError("mu-law codes must lie in 0..255")
    return mulaw_expand((codes.astype(np.float64) - CENTER) / CENTER)


def worst_case_error() -> float:
    """Largest |decode(encode(x)) - x| over x in [-1, 1): the clamp above code 255."""
    return 1.0 - float(mulaw_decode(N_CODES - 1))


def code_levels() -> np.ndarray:
    return mulaw_decode(np.arange(N_CODES))
