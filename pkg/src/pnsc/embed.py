"""Siamese speaker encoder trained with a pairwise binary cross-entropy.

Pairs of utterances from the same speaker should have a large inner
product of embeddings, pairs from different speakers a small one:

    loss = -sum_pos log sigmoid(z_i . z_j) - sum_neg log(1 - sigmoid(z_i . z_j))

The encoder reads normalized per-frame features through two 32-unit GRU
layers and mean-pools the second layer's states over time.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass

import numpy as np

from .dsp.features import N_FEATURES, normalize_features
from .fileio import atomic_write
from .nn import GRU, Adam, Module, NonFiniteError, Tensor, TrainingDiverged, dump_checkpoint, load_checkpoint
from .nn import tensor as T

EMBED_DIM = 32
MIN_FRAMES = 10


class UtteranceTooShort(ValueError):
    pass


@dataclass
class EmbedderConfig:
    hidden: int = EMBED_DIM
    batch_size: int = 64
    steps: int = 300
    crop_frames: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    clip: float = 0.0
    eval_every: int = 25
    seed: int = 0


class EmbedderModel(Module):
    kind = "embedder"

    def __init__(self, hidden: int = EMBED_DIM, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.gru1 = GRU(N_FEATURES, hidden, rng=rng, name="gru1")
        self.gru2 = GRU(hidden, hidden, rng=rng, name="gru2")

    def layers(self):
        return [self.gru1, self.gru2]

    def forward(self, feats) -> Tensor:
        """Embeddings ``(B, D)`` for a batch of equal-length feature sequences ``(B, T, 20)``."""
        x = Tensor(normalize_features(feats))
        return self.gru2(self.gru1(x)).mean(axis=1)

    def copy(self) -> "EmbedderModel":
        other = EmbedderModel(self.hidden)
        other.load_arrays(self.state_arrays())
        return other


def encode_utterance(model: EmbedderModel, feats) -> np.ndarray:
    """Embedding of one utterance given its per-frame features ``(T, 20)``."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != N_FEATURES:
        raise ValueError(f"expected (frames, {N_FEATURES}) features, got {feats.shape}")
    if feats.shape[0] < MIN_FRAMES:
        raise UtteranceTooShort(f"utterance has {feats.shape[0]} frames, need at least {MIN_FRAMES}")
    return model.forward(feats[None]).data[0]


def mean_speaker_embedding(model: EmbedderModel, utterances) -> np.ndarray:
    """Average embedding over a speaker's utterances (feature arrays or embeddings)."""
    if len(utterances) == 0:
        raise ValueError("speaker has no utterances")
    embs = [u if np.ndim(u) == 1 else encode_utterance(model, u) for u in utterances]
    return np.mean(np.stack(embs), axis=0)


# -- pairs and loss ---------------------------------------------------------------


def sample_pairs(speakers: dict, rng: np.random.Generator, batch_size: int = 64):
    """Balanced pair batch: ``batch_size/2`` same-speaker, the rest cross-speaker.

    ``speakers`` maps speaker id to a list of utterance references. Returns
    ``[((spk_i, utt_i), (spk_j, utt_j), label), ...]`` with label 1 for
    positive pairs.
    """
    ids = list(speakers)
    if len(ids) < 2:
        raise ValueError("need at least two speakers to form negative pairs")
    if batch_size < 2 or batch_size % 2:
        raise ValueError("batch size must be a positive even number")
    multi = [s for s in ids if len(speakers[s]) >= 2]
    if not multi:
        raise ValueError("no speaker has two utterances for a positive pair")
    pairs = []
    for _ in range(batch_size // 2):
        k = multi[rng.integers(len(multi))]
        i, j = rng.choice(len(speakers[k]), size=2, replace=False)
        pairs.append(((k, speakers[k][i]), (k, speakers[k][j]), 1))
    for _ in range(batch_size // 2):
        a, b = rng.choice(len(ids), size=2, replace=False)
        ka, kb = ids[a], ids[b]
        ua = speakers[ka][rng.integers(len(speakers[ka]))]
        ub = speakers[kb][rng.integers(len(speakers[kb]))]
        pairs.append(((ka, ua), (kb, ub), 0))
    return pairs


def contrastive_terms(z_i, z_j, labels) -> tuple[Tensor, Tensor]:
    """Positive-pair and negative-pair sums of the pairwise BCE, separately."""
    z_i, z_j = T.ensure(z_i), T.ensure(z_j)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    score = (z_i * z_j).sum(axis=-1)
    if score.ndim == 0:
        score = T.reshape(score, (1,))
    # -log sigmoid(s) for positives, -log sigmoid(-s) = -log(1 - sigmoid(s)) for negatives.
    sign = 2.0 * labels - 1.0
    per_pair = -T.log_sigmoid(score * sign)
    pos = (per_pair * labels).sum()
    neg = (per_pair * (1.0 - labels)).sum()
    return pos, neg


def contrastive_loss(z_i, z_j, labels, reduction: str = "sum") -> Tensor:
    pos, neg = contrastive_terms(z_i, z_j, labels)
    total = pos + neg
    if reduction == "mean":
        return total * (1.0 / np.size(labels))
    return total


# -- training ---------------------------------------------------------------------


def _crop(feats: np.ndarray, length: int, rng) -> np.ndarray:
    if feats.shape[0] <= length:
        pad = np.repeat(feats[-1:], length - feats.shape[0], axis=0)
        return np.concatenate([feats, pad])
    start = rng.integers(feats.shape[0] - length + 1)
    return feats[start : start + length]


def _pair_batch(features: dict, pairs, crop: int, rng):
    left = np.stack([_crop(features[k][u], crop, rng) for (k, u), _, _ in pairs])
    right = np.stack([_crop(features[k][u], crop, rng) for _, (k, u), _ in pairs])
    labels = np.array([lab for _, _, lab in pairs], dtype=np.float64)
    return left, right, labels


def pair_loss(model: EmbedderModel, left, right, labels, reduction: str = "mean") -> Tensor:
    z = model.forward(np.concatenate([left, right]))
    n = left.shape[0]
    return contrastive_loss(z[:n], z[n:], labels, reduction)


def train_embedder(features: dict, config: EmbedderConfig | None = None, val_features: dict | None = None, log=None):
    """Train the encoder on ``{speaker: [features (T, 20), ...]}``.

    Returns ``(model, history)``; history rows hold step, train loss, fixed
    validation-batch loss and wall time. ``log`` (if given) receives each row.
    """
    config = config or EmbedderConfig()
    if len(features) < 2:
        raise ValueError("need at least two training speakers")
    rng = np.random.default_rng(config.seed)
    model = EmbedderModel(config.hidden, seed=config.seed)
    refs = {k: list(range(len(v))) for k, v in features.items()}
    val_source = val_features if val_features and len(val_features) >= 2 else features
    val_refs = {k: list(range(len(v))) for k, v in val_source.items()}
    vrng = np.random.default_rng([config.seed, 1])
    val_batch = _pair_batch(val_source, sample_pairs(val_refs, vrng, config.batch_size), config.crop_frames, vrng)
    opt = Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), clip=config.clip or None)
    history = []
    t0 = time.perf_counter()

    def record(step, train_loss):
        val = float(pair_loss(model, *val_batch).data)
        row = {"step": step, "loss": train_loss, "val_loss": val, "wall_time": time.perf_counter() - t0}
        history.append(row)
        if log is not None:
            log(row)

    record(0, float("nan"))
    for step in range(1, config.steps + 1):
        pairs = sample_pairs(refs, rng, config.batch_size)
        batch = _pair_batch(features, pairs, config.crop_frames, rng)
        loss = pair_loss(model, *batch)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"embedder loss became {value} at step {step}", model.copy(), history)
        opt.zero_grad()
        try:
            loss.backward()
            opt.step()
        except NonFiniteError as exc:
            # the update is skipped when the gradient is non-finite, so the model is still good
            raise TrainingDiverged(f"embedder gradient non-finite at step {step}", model.copy(), history) from exc
        if step % config.eval_every == 0 or step == config.steps:
            record(step, value)
    return model, history


def save_embedder(model: EmbedderModel, config: EmbedderConfig | None = None) -> bytes:
    meta = {"hidden": model.hidden}
    if config is not None:
        meta["config"] = asdict(config)
    return dump_checkpoint(EmbedderModel.kind, model.manifest(), model.state_arrays(), meta)


def load_embedder(data: bytes) -> EmbedderModel:
    kind, manifest, arrays, meta = load_checkpoint(data)
    if kind != EmbedderModel.kind:
        raise ValueError(f"checkpoint holds a {kind!r} model, not an embedder")
    model = EmbedderModel(int(meta["hidden"]))
    if model.manifest() != manifest:
        raise ValueError("checkpoint layer manifest does not match the embedder architecture")
    model.load_arrays(arrays)
    return model


def export_embeddings_csv(path, rows) -> None:
    """Write ``(speaker_id, utterance_id, z)`` rows as CSV with columns z0..z31."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = len(rows[0][2]) if rows else EMBED_DIM
    w.writerow(["speaker_id", "utterance_id", *[f"z{i}" for i in range(dim)]])
    for spk, utt, z in rows:
        w.writerow([spk, utt, *[repr(float(v)) for v in z]])
    atomic_write(path, buf.getvalue())
