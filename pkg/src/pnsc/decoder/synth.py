"""Closed-loop synthesis: LPC prediction plus sampled mu-law excitation, one sample at a time."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..bitstream import HeaderError, StreamError, StreamHeader, decode_features, read_packets
from ..dsp.features import FRAME_SIZE
from ..dsp.mulaw import CENTER, MU, N_CODES, code_levels
from .data import frame_predictors
from .model import DecoderModel, RecurrentState, frame_rate_forward, sample_rate_forward

_LEVELS = code_levels()
_LOG1P_MU = math.log1p(MU)


def encode_scalar(x: float) -> int:
    """Scalar mu-law encoder for the synthesis loop; agrees with ``mulaw_encode``."""
    x = min(max(x, -1.0), 1.0)
    y = math.copysign(math.log1p(MU * abs(x)) / _LOG1P_MU, x)
    return min(max(round(y * CENTER) + CENTER, 0), N_CODES - 1)


def sample_excitation(p: np.ndarray, mode: str = "sample", rng: np.random.Generator | None = None, temperature: float = 1.0) -> int:
    """Draw an excitation code from ``p`` (``mode="sample"``) or take its mode (``"argmax"``).

    A temperature below 1 sharpens the distribution before sampling.
    """
    if mode == "argmax":
        return int(np.argmax(p))
    if mode != "sample":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if rng is None:
        raise ValueError("sampling needs an rng")
    if temperature != 1.0:
        with np.errstate(divide="ignore"):
            logp = np.log(p) / temperature
        p = np.exp(logp - logp.max())
    cdf = np.cumsum(p)
    code = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(code, N_CODES - 1)


@dataclass
class SynthesisTrace:
    prediction: np.ndarray
    excitation_codes: np.ndarray
    max_prob_error: float = 0.0


@dataclass
class SynthesisOutput:
    samples: np.ndarray
    header: StreamHeader | None = None
    error: StreamError | None = None
    trace: SynthesisTrace | None = field(default=None, repr=False)

    @property
    def complete(self) -> bool:
        return self.error is None


def synthesize_features(
    model: DecoderModel,
    feats,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
    zero_excitation: bool = False,
    history=None,
    trace: bool = False,
):
    """Decode dequantized frame features ``(F, 20)`` to ``F * 160`` samples.

    Only the decoder's own outputs feed back; ``history`` optionally seeds the
    ``M`` samples before the first frame (oldest first). With
    ``zero_excitation`` every excitation is the zero code, so the output is
    the pure LPC continuation of ``history``.
    """
    feats = np.asarray(feats, dtype=np.float64)
    n_frames = feats.shape[0]
    M = model.config.lpc_order
    lpc = frame_predictors(feats, M) if n_frames else np.zeros((0, M))
    cond = frame_rate_forward(model, feats).data if n_frames else np.zeros((0, model.config.cond))
    out = np.zeros(M + n_frames * FRAME_SIZE)
    if history is not None:
        history = np.asarray(history, dtype=np.float64)
        if history.shape != (M,):
            raise ValueError(f"history must hold {M} samples")
        out[:M] = history
    state = RecurrentState.zeros(model.config)
    s_code = encode_scalar(out[M - 1])
    e_code = CENTER
    us = np.empty(n_frames * FRAME_SIZE)
    es = np.empty(n_frames * FRAME_SIZE, dtype=np.int64)
    worst = 0.0
    pos = M
    for i in range(n_frames):
        a_rev = lpc[i][::-1].copy()
        f = cond[i]
        for _ in range(FRAME_SIZE):
            u = float(a_rev @ out[pos - M : pos])
            p, state = sample_rate_forward(model, s_code, e_code, encode_scalar(u), f, state)
            if trace:
                worst = max(worst, abs(float(p.sum()) - 1.0))
            e_code = CENTER if zero_excitation else sample_excitation(p, mode, rng, temperature)
            s = u + _LEVELS[e_code]
            out[pos] = s
            us[pos - M] = u
            es[pos - M] = e_code
            s_code = encode_scalar(s)
            pos += 1
    samples = out[M:]
    if trace:
        return samples, SynthesisTrace(us, es, worst)
    return samples


def synthesize(model: DecoderModel, packets, **kwargs) -> np.ndarray:
    """Decode a list of feature packets (4 frames each)."""
    return synthesize_features(model, decode_features(list(packets)), **kwargs)


def synthesize_stream(model: DecoderModel, data: bytes, **kwargs) -> SynthesisOutput:
    """Decode a byte stream; on a damaged packet, output stops after the last good one."""
    header, packets, error = read_packets(data)
    samples = synthesize(model, packets, **kwargs)
    return SynthesisOutput(samples, header, error)


def decode_dispatch(bank, data: bytes, **kwargs) -> SynthesisOutput:
    """Route a stream to the bank member named by its header's group index."""
    header, packets, error = read_packets(data)
    if header.n_groups != len(bank):
        raise HeaderError(f"stream was encoded for {header.n_groups} groups, bank has {len(bank)} decoders")
    if header.group_index >= len(bank):
        raise HeaderError(f"group index {header.group_index} outside bank of {len(bank)}")
    samples = synthesize(bank.decoders[header.group_index], packets, **kwargs)
    return SynthesisOutput(samples, header, error)
