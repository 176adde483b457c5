"""Framing, Bark-scale cepstrum, pitch, and cepstrum-to-LPC conversion.

Frame ``i`` owns samples ``[160 i, 160 i + 160)``. Its cepstrum is taken on
the 320-sample window centred on the frame, its pitch on the 512-sample
window with the same centre; samples outside the signal count as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .lpc import LPC_ORDER, LpcCoeffs, levinson_durbin

SAMPLE_RATE = 16000
FRAME_SIZE = 160
WINDOW_SIZE = 320
N_BANDS = 18
N_FEATURES = N_BANDS + 2
LOG_FLOOR = -10.0
PITCH_MIN = 16
PITCH_MAX = 256
PITCH_WINDOW = 2 * PITCH_MAX

# Band centres in 50 Hz FFT bins (320-point FFT at 16 kHz); the spacing widens
# from 200 Hz at the bottom to 1.2 kHz at the top, roughly following Bark.
BAND_CENTERS = 4 * np.array([0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 12, 14, 16, 20, 24, 28, 34, 40])
N_BINS = WINDOW_SIZE // 2 + 1


def _band_matrix() -> np.ndarray:
    # Triangular weights: bin k splits linearly between its two neighbouring centres.
    W = np.zeros((N_BANDS, N_BINS))
    for i in range(N_BANDS - 1):
        lo, hi = BAND_CENTERS[i], BAND_CENTERS[i + 1]
        frac = (np.arange(lo, hi) - lo) / (hi - lo)
        W[i, lo:hi] += 1.0 - frac
        W[i + 1, lo:hi] += frac
    W[-1, BAND_CENTERS[-1]] = 1.0
    return W


BAND_WEIGHTS = _band_matrix()
_BAND_NORM = BAND_WEIGHTS / BAND_WEIGHTS.sum(axis=1, keepdims=True)
# c = DCT @ L ; L = IDCT @ c   (c[0] is the mean log band energy)
_K = np.arange(N_BANDS)[:, None]
_N = np.arange(N_BANDS)[None, :]
IDCT = np.cos(np.pi * _K.T * (_N.T + 0.5) / N_BANDS)
DCT = np.cos(np.pi * _K * (_N + 0.5) / N_BANDS) * np.where(_K == 0, 1.0, 2.0) / N_BANDS
ANALYSIS_WINDOW = np.hanning(WINDOW_SIZE + 2)[1:-1]


@dataclass(frozen=True)
class Frame:
    index: int
    samples: np.ndarray
    padded: bool = False


def frame_signal(samples, frame_len: int = FRAME_SIZE) -> list[Frame]:
    """Cut into non-overlapping frames; the last one is zero-padded if partial."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot frame an empty buffer")
    n = -(-x.size // frame_len)
    padded = np.zeros(n * frame_len)
    padded[: x.size] = x
    tail = x.size % frame_len != 0
    return [
        Frame(i, padded[i * frame_len : (i + 1) * frame_len], padded=tail and i == n - 1)
        for i in range(n)
    ]


def band_energies(window) -> np.ndarray:
    x = np.asarray(window, dtype=np.float64)
    if x.shape != (WINDOW_SIZE,):
        raise ValueError(f"cepstrum window must have {WINDOW_SIZE} samples")
    spec = np.fft.rfft(x * ANALYSIS_WINDOW)
    power = (spec.real**2 + spec.imag**2) / np.sum(ANALYSIS_WINDOW**2)
    return _BAND_NORM @ power


def log_band_energies(window) -> np.ndarray:
    E = band_energies(window)
    with np.errstate(divide="ignore"):
        return np.maximum(np.log10(E), LOG_FLOOR)


def bark_cepstrum(window) -> np.ndarray:
    """18 cepstral coefficients of the Bark band log-energies (log10 units)."""
    return DCT @ log_band_energies(window)


def cepstrum_to_log_bands(cepstrum) -> np.ndarray:
    return IDCT @ np.asarray(cepstrum, dtype=np.float64)


def estimate_pitch(window, min_period: int = PITCH_MIN, max_period: int = PITCH_MAX) -> tuple[float, float]:
    """Normalized-autocorrelation pitch search.

    Returns ``(period, correlation)``: the shortest local correlation peak
    within 85% of the best one, refined by parabolic interpolation. The
    correlation is the normalized value at the integer peak lag.
    """
    x = np.asarray(window, dtype=np.float64)
    if x.size < 2 * max_period:
        raise ValueError(f"pitch window needs at least {2 * max_period} samples")
    x = x - x.mean()
    seg = x.size - max_period
    ref = x[:seg]
    e_ref = np.dot(ref, ref)
    if e_ref < 1e-10 * seg:
        return float(min_period), 0.0
    lags = np.arange(min_period - 1, max_period + 2)
    lags = lags[(lags >= 1) & (lags <= x.size - seg)]
    views = sliding_window_view(x, seg)[lags]
    num = views @ ref
    den = np.sqrt(e_ref * np.einsum("ij,ij->i", views, views))
    corr = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    inner = (lags >= min_period) & (lags <= max_period)
    idx = np.flatnonzero(inner)
    best = corr[idx].max()
    if best <= 0:
        return float(min_period), 0.0
    chosen = idx[np.argmax(corr[idx])]
    for i in idx:
        if 0 < i < len(lags) - 1 and corr[i] >= 0.85 * best and corr[i] >= corr[i - 1] and corr[i] >= corr[i + 1]:
            chosen = i
            break
    period = float(lags[chosen])
    if 0 < chosen < len(lags) - 1:
        c0, c1, c2 = corr[chosen - 1], corr[chosen], corr[chosen + 1]
        denom = c0 - 2 * c1 + c2
        if denom < 0:
            period += float(np.clip(0.5 * (c0 - c2) / denom, -0.5, 0.5))
    period = float(np.clip(period, min_period, max_period))
    return period, float(np.clip(corr[chosen], 0.0, 1.0))


def _windows(x: np.ndarray, n_frames: int, length: int) -> np.ndarray:
    # Windows of `length` centred on each frame centre (160 i + 80).
    before = length // 2 - FRAME_SIZE // 2
    pad = np.zeros(before + n_frames * FRAME_SIZE + length)
    pad[before : before + x.size] = x
    starts = np.arange(n_frames) * FRAME_SIZE
    return sliding_window_view(pad, length)[starts]


def frame_features(samples) -> np.ndarray:
    """Per-frame unquantized features ``(n_frames, 20)``: 18 cepstra, period, correlation."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    n = -(-x.size // FRAME_SIZE)
    feats = np.empty((n, N_FEATURES))
    for i, w in enumerate(_windows(x, n, WINDOW_SIZE)):
        feats[i, :N_BANDS] = bark_cepstrum(w)
    for i, w in enumerate(_windows(x, n, PITCH_WINDOW)):
        feats[i, N_BANDS:] = estimate_pitch(w)
    return feats


def cepstrum_to_lpc(cepstrum, order: int = LPC_ORDER, lag_window_hz: float = 50.0, noise_floor: float = 1e-4) -> LpcCoeffs:
    """Predictor coefficients from a (dequantized) Bark cepstrum.

    Log band energies are expanded to a 161-bin power spectrum by linear
    interpolation between band centres, inverse-transformed to an
    autocorrelation, lag-windowed, floored, then solved by Levinson-Durbin.
    """
    bands = 10.0 ** cepstrum_to_log_bands(cepstrum)
    power = np.interp(np.arange(N_BINS), BAND_CENTERS, bands)
    r = np.fft.irfft(power, n=WINDOW_SIZE)[: order + 1]
    lags = np.arange(order + 1)
    r = r * np.exp(-0.5 * (2 * np.pi * lag_window_hz * lags / SAMPLE_RATE) ** 2)
    r[0] *= 1.0 + noise_floor
    return levinson_durbin(r, order)


def normalize_features(feats) -> np.ndarray:
    """Map feature rows to roughly unit range for the networks.

    c0 is re-centred around typical speech level, the period goes to a
    log scale in [-1, 1] and the correlation to [-1, 1].
    """
    f = np.array(feats, dtype=np.float64, copy=True)
    f[..., 0] = (f[..., 0] + 4.0) / 2.0
    f[..., N_BANDS] = np.log2(np.clip(f[..., N_BANDS], PITCH_MIN, PITCH_MAX) / PITCH_MIN) / 2.0 - 1.0
    f[..., N_BANDS + 1] = 2.0 * f[..., N_BANDS + 1] - 1.0
    return f
