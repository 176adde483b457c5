"""Training material for the decoder: what the receiver sees plus the true excitation.

Each utterance is analysed, passed through the bitstream quantizer, and the
per-frame predictor is rebuilt from the dequantized cepstrum, exactly as the
decoder will do. The excitation target is the residual of the clean signal
under that predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bitstream import decode_features, encode_features
from ..dsp.features import FRAME_SIZE, N_BANDS, cepstrum_to_lpc, frame_features
from ..dsp.lpc import LPC_ORDER, lpc_prediction_signal
from ..dsp.mulaw import CENTER, mulaw_encode


@dataclass
class UtteranceData:
    feats: np.ndarray  # (F, 20) dequantized
    lpc: np.ndarray  # (F, M) predictor per frame
    signal: np.ndarray  # (F * 160,)
    prediction: np.ndarray  # u, same length
    s_codes: np.ndarray
    e_codes: np.ndarray
    u_codes: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.feats.shape[0]


@dataclass
class TrainingBatch:
    feats: np.ndarray  # (B, frames, 20)
    s_prev: np.ndarray  # (B, T) codes
    e_prev: np.ndarray
    u: np.ndarray
    target: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.target.size


def frame_predictors(feats: np.ndarray, order: int = LPC_ORDER) -> np.ndarray:
    return np.stack([cepstrum_to_lpc(row[:N_BANDS], order).a for row in feats])


def framewise_prediction(signal: np.ndarray, lpc: np.ndarray) -> np.ndarray:
    """``u`` over the whole signal, switching predictor every frame but keeping history."""
    M = lpc.shape[1]
    padded = np.concatenate([np.zeros(M), signal])
    u = np.empty_like(signal)
    for i, a in enumerate(lpc):
        lo = i * FRAME_SIZE
        u[lo : lo + FRAME_SIZE] = lpc_prediction_signal(signal[lo : lo + FRAME_SIZE], a, zi=padded[lo : lo + M])
    return u


def prepare_utterance(samples, order: int = LPC_ORDER) -> UtteranceData:
    samples = np.asarray(samples, dtype=np.float64)
    feats = decode_features(encode_features(frame_features(samples)))
    n = feats.shape[0]
    signal = np.zeros(n * FRAME_SIZE)
    signal[: samples.size] = samples
    lpc = frame_predictors(feats, order)
    u = framewise_prediction(signal, lpc)
    e = signal - u
    return UtteranceData(feats, lpc, signal, u, mulaw_encode(signal), mulaw_encode(e), mulaw_encode(u))


def _previous(codes: np.ndarray, start: int, stop: int) -> np.ndarray:
    # codes[t-1] for t in [start, stop), with the silent code before the signal
    if start == 0:
        return np.concatenate([[CENTER], codes[: stop - 1]])
    return codes[start - 1 : stop - 1]


def chunk(utt: UtteranceData, frame: int, n_frames: int):
    lo, hi = frame * FRAME_SIZE, (frame + n_frames) * FRAME_SIZE
    return (
        utt.feats[frame : frame + n_frames],
        _previous(utt.s_codes, lo, hi),
        _previous(utt.e_codes, lo, hi),
        utt.u_codes[lo:hi],
        utt.e_codes[lo:hi],
    )


def stack_chunks(chunks) -> TrainingBatch:
    cols = list(zip(*chunks))
    return TrainingBatch(*(np.stack(c) for c in cols))


def random_batch(utts: list[UtteranceData], rng: np.random.Generator, batch_size: int, n_frames: int) -> TrainingBatch:
    chunks = []
    for _ in range(batch_size):
        utt = utts[int(rng.integers(len(utts)))]
        if utt.n_frames < n_frames:
            raise ValueError(f"utterance has {utt.n_frames} frames, chunks need {n_frames}")
        chunks.append(chunk(utt, int(rng.integers(utt.n_frames - n_frames + 1)), n_frames))
    return stack_chunks(chunks)


def evaluation_batches(utts: list[UtteranceData], n_frames: int, batch_size: int = 64):
    """Every non-overlapping chunk of every utterance, in order, grouped into batches."""
    chunks = [chunk(u, k, n_frames) for u in utts for k in range(0, u.n_frames - n_frames + 1, n_frames)]
    return [stack_chunks(chunks[i : i + batch_size]) for i in range(0, len(chunks), batch_size)]
