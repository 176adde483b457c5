"""Decoder network: a frame-rate conditioning net and an autoregressive sample-rate net.

The frame-rate network maps each 10 ms feature row to a conditioning
vector ``f``. The sample-rate network sees the previous output sample, the
previous excitation and the current LPC prediction (all as mu-law codes,
embedded), concatenated with ``f``, and outputs a distribution over the 256
excitation codes:

    x_t = [E(s_{t-1}), E(e_{t-1}), E(u_t), f]
    a_t = GRU_A(x_t)
    b_t = GRU_B([a_t, f])
    P(e_t) = softmax(W b_t + c)
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from ..dsp.features import FRAME_SIZE, N_FEATURES, normalize_features
from ..dsp.lpc import LPC_ORDER
from ..dsp.mulaw import N_CODES
from ..nn import GRU, Dense, Embedding, LayerSpec, Module, Tensor, cross_entropy, gru_step_array, param_count
from ..nn import tensor as T
from ..nn.functional import log_softmax_array


@dataclass(frozen=True)
class DecoderConfig:
    hidden: int = 32  # GRU-A units
    gru_b: int = 16
    cond: int = 64
    embed: int = 16
    lpc_order: int = LPC_ORDER

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if int(value) < 1:
                raise ValueError(f"decoder {name} must be positive, got {value}")

    @property
    def sample_input(self) -> int:
        return 3 * self.embed + self.cond

    def manifest(self) -> list[LayerSpec]:
        return [
            LayerSpec("embedding", "code_embedding", (N_CODES, self.embed)),
            LayerSpec("dense", "frame1", (N_FEATURES, self.cond)),
            LayerSpec("dense", "frame2", (self.cond, self.cond)),
            LayerSpec("gru", "gru_a", (self.sample_input, self.hidden)),
            LayerSpec("gru", "gru_b", (self.hidden + self.cond, self.gru_b)),
            LayerSpec("dense", "output", (self.gru_b, N_CODES)),
        ]

    def param_count(self) -> int:
        return param_count(self.manifest())


# Desk presets are trainable on a laptop CPU; the reference pair matches the
# published hidden sizes and is used for parameter accounting only.
PRESETS = {
    "large": DecoderConfig(hidden=64),
    "small": DecoderConfig(hidden=32),
    "reference-large": DecoderConfig(hidden=384, cond=128, embed=128),
    "reference-small": DecoderConfig(hidden=256, cond=128, embed=128),
}


def preset(name: str) -> DecoderConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown decoder preset {name!r}; choose from {sorted(PRESETS)}") from None


class DecoderModel(Module):
    kind = "decoder"

    def __init__(self, config: DecoderConfig | None = None, seed: int = 0):
        config = config or DecoderConfig()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.embedding = Embedding(N_CODES, c.embed, rng=rng, name="code_embedding")
        self.frame1 = Dense(N_FEATURES, c.cond, "tanh", rng=rng, name="frame1")
        self.frame2 = Dense(c.cond, c.cond, "tanh", rng=rng, name="frame2")
        self.gru_a = GRU(c.sample_input, c.hidden, rng=rng, name="gru_a")
        self.gru_b = GRU(c.hidden + c.cond, c.gru_b, rng=rng, name="gru_b")
        self.output = Dense(c.gru_b, N_CODES, rng=rng, name="output")

    def layers(self):
        return [self.embedding, self.frame1, self.frame2, self.gru_a, self.gru_b, self.output]

    def copy(self) -> "DecoderModel":
        other = DecoderModel(self.config)
        other.load_arrays(self.state_arrays())
        return other

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in self.state_arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def frame_rate_forward(model: DecoderModel, feats) -> Tensor:
    """Conditioning vectors ``(..., frames, cond)`` from dequantized features ``(..., frames, 20)``."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[-1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES}-dim feature rows, got {feats.shape}")
    return model.frame2(model.frame1(Tensor(normalize_features(feats))))


def sample_rate_logits(model: DecoderModel, s_prev, e_prev, u, cond: Tensor) -> Tensor:
    """Teacher-forced logits ``(B, T, 256)``.

    ``s_prev``, ``e_prev`` and ``u`` are code arrays ``(B, T)`` with
    ``T = frames * 160``; ``cond`` is the frame-rate output ``(B, frames, cond)``.
    The recurrent states start from zero at the beginning of each sequence.
    """
    f = T.repeat_frames(cond, FRAME_SIZE, axis=1)
    emb = T.concat([model.embedding(s_prev), model.embedding(e_prev), model.embedding(u)], axis=-1)
    a = model.gru_a(T.concat([emb, f], axis=-1))
    b = model.gru_b(T.concat([a, f], axis=-1))
    return model.output(b)


def teacher_forced_loss(model: DecoderModel, batch) -> Tensor:
    """Mean cross-entropy (nats per sample) of the true excitation codes."""
    cond = frame_rate_forward(model, batch.feats)
    logits = sample_rate_logits(model, batch.s_prev, batch.e_prev, batch.u, cond)
    return cross_entropy(logits, batch.target)


def teacher_forced_nll(model: DecoderModel, batch) -> np.ndarray:
    """Per-sample negative log-likelihoods ``(B, T)``; graph-free evaluation helper."""
    cond = frame_rate_forward(model, batch.feats)
    logits = sample_rate_logits(model, batch.s_prev, batch.e_prev, batch.u, cond).data
    logp = log_softmax_array(logits)
    return -np.take_along_axis(logp, batch.target[..., None], axis=-1)[..., 0]


@dataclass
class RecurrentState:
    """GRU-A and GRU-B hidden vectors carried between samples during synthesis."""

    gru_a: np.ndarray
    gru_b: np.ndarray

    @classmethod
    def zeros(cls, config: DecoderConfig) -> "RecurrentState":
        return cls(np.zeros(config.hidden), np.zeros(config.gru_b))


def sample_rate_forward(model: DecoderModel, s_code: int, e_code: int, u_code: int, f: np.ndarray, state: RecurrentState):
    """One synthesis step: ``(P(e_t), next_state)`` for a single sample."""
    for code in (s_code, e_code, u_code):
        if not 0 <= code < N_CODES:
            raise ValueError(f"mu-law code {code} outside 0..255")
    table = model.embedding.table.data
    x = np.concatenate([table[s_code], table[e_code], table[u_code], f])
    ga, gb = model.gru_a, model.gru_b
    ha = gru_step_array(x, state.gru_a, ga.W.data, ga.U.data, ga.b.data)
    hb = gru_step_array(np.concatenate([ha, f]), state.gru_b, gb.W.data, gb.U.data, gb.b.data)
    logits = model.output.W.data @ hb + model.output.b.data
    p = np.exp(logits - logits.max())
    return p / p.sum(), RecurrentState(ha, hb)
