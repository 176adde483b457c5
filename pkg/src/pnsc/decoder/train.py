"""Teacher-forced decoder training, the per-group decoder bank, and its file format."""

from __future__ import annotations

import json
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..grouping import ClusterModel
from ..nn import Adam, NonFiniteError, TrainingDiverged, dump_checkpoint, load_checkpoint
from .data import UtteranceData, evaluation_batches, random_batch
from .model import DecoderConfig, DecoderModel, preset, teacher_forced_loss, teacher_forced_nll

BANK_MAGIC = b"PNSB"
BANK_VERSION = 1


@dataclass
class DecoderTrainConfig:
    preset: str = "small"
    epochs: int = 10
    steps_per_epoch: int = 25
    batch_size: int = 8
    chunk_frames: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    clip: float = 5e-2
    seed: int = 0
    leakage: float = 0.05

    def validate(self) -> None:
        for name in ("steps_per_epoch", "batch_size", "chunk_frames", "lr", "clip"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0.0 <= self.leakage <= 1.0:
            raise ValueError("leakage must lie in [0, 1]")

    @property
    def decoder(self) -> DecoderConfig:
        return preset(self.preset)


def evaluate_ce(model: DecoderModel, utts: list[UtteranceData], chunk_frames: int = 4) -> float:
    """Teacher-forced cross-entropy in nats per sample over every chunk of ``utts``."""
    total, count = 0.0, 0
    for batch in evaluation_batches(utts, chunk_frames):
        nll = teacher_forced_nll(model, batch)
        total += float(nll.sum())
        count += nll.size
    if count == 0:
        raise ValueError("no evaluation material")
    return total / count


def weighted_validation_loss(losses, sizes) -> float:
    """Size-weighted mean of per-group losses: ``sum(n_c * L_c) / sum(n_c)``."""
    losses = [float(x) for x in losses]
    sizes = [int(n) for n in sizes]
    if len(losses) != len(sizes) or not losses:
        raise ValueError("need equal-length, non-empty loss and size lists")
    if any(n <= 0 for n in sizes):
        raise ValueError("group sizes must be positive")
    return sum(n * x for n, x in zip(sizes, losses)) / sum(sizes)


def _val_row(model, val_sets, chunk_frames):
    if not val_sets:
        return None, []
    per = [evaluate_ce(model, utts, chunk_frames) for _, utts in val_sets]
    return weighted_validation_loss(per, [w for w, _ in val_sets]), per


def train_decoder(
    utts: list[UtteranceData],
    config: DecoderTrainConfig | None = None,
    val_sets=None,
    seed: int | None = None,
    log=None,
):
    """Train one decoder with teacher forcing.

    ``val_sets`` is a list of ``(weight, utterances)``; each epoch row records
    the per-set cross-entropies and their weighted mean. Returns
    ``(model, history)``; row 0 describes the untrained model.
    """
    config = config or DecoderTrainConfig()
    config.validate()
    if not utts:
        raise ValueError("decoder training needs at least one utterance")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    model = DecoderModel(config.decoder, seed=seed)
    opt = Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), clip=config.clip)
    history = []
    t0 = time.perf_counter()

    def record(epoch, train_loss):
        val, per = _val_row(model, val_sets, config.chunk_frames)
        row = {"epoch": epoch, "step": epoch * config.steps_per_epoch, "loss": train_loss, "val_loss": val, "val_by_set": per, "wall_time": time.perf_counter() - t0}
        history.append(row)
        if log is not None:
            log(row)

    record(0, None)
    for epoch in range(1, config.epochs + 1):
        losses = []
        for _ in range(config.steps_per_epoch):
            batch = random_batch(utts, rng, config.batch_size, config.chunk_frames)
            loss = teacher_forced_loss(model, batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"decoder loss became {value} in epoch {epoch}", model.copy(), history)
            opt.zero_grad()
            try:
                loss.backward()
                opt.step()
            except NonFiniteError as exc:
                raise TrainingDiverged(f"decoder gradient non-finite in epoch {epoch}", model.copy(), history) from exc
            losses.append(value)
        record(epoch, float(np.mean(losses)))
    return model, history


# -- decoder bank -----------------------------------------------------------------


@dataclass
class DecoderBank:
    decoders: list[DecoderModel]
    cluster_digest: str = ""
    histories: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.decoders:
            raise ValueError("a bank needs at least one decoder")
        first = self.decoders[0].config
        if any(d.config != first for d in self.decoders):
            raise ValueError("all bank members must share one architecture")

    def __len__(self) -> int:
        return len(self.decoders)

    @property
    def config(self) -> DecoderConfig:
        return self.decoders[0].config

    def checksums(self) -> list[str]:
        return [d.checksum() for d in self.decoders]


def pool(utts_by_speaker: dict, speakers) -> list[UtteranceData]:
    return [u for s in sorted(speakers) for u in utts_by_speaker[s]]


def group_training_sets(cluster: ClusterModel, utts_by_speaker: dict, utterance_groups: dict | None = None, leakage: float = 0.05, seed: int = 0):
    """Per-group training lists, optionally topped up with misrouted utterances.

    ``utterance_groups`` maps ``(speaker, index)`` to the group the classifier
    picks for that single utterance. Utterances of other groups' speakers that
    the classifier sends to group ``c`` are candidates; up to
    ``ceil(leakage * len(group c))`` of them are added.
    """
    sets = []
    for c in range(cluster.n_groups):
        members = [s for s in sorted(utts_by_speaker) if cluster.assignments.get(s) == c]
        data = pool(utts_by_speaker, members)
        if utterance_groups and leakage > 0:
            cands = sorted(k for k, g in utterance_groups.items() if g == c and cluster.assignments.get(k[0]) != c and k[0] in utts_by_speaker)
            n_extra = min(len(cands), math.ceil(leakage * len(data)))
            if n_extra:
                rng = np.random.default_rng([seed, c, 7])
                picked = sorted(rng.choice(len(cands), size=n_extra, replace=False))
                data = data + [utts_by_speaker[cands[i][0]][cands[i][1]] for i in picked]
        sets.append(data)
    return sets


def _train_job(args):
    data, config, val_sets, seed = args
    return train_decoder(data, config, val_sets, seed=seed)


def train_bank(
    cluster: ClusterModel,
    utts_by_speaker: dict,
    config: DecoderTrainConfig | None = None,
    val_sets_by_group=None,
    utterance_groups: dict | None = None,
    workers: int = 1,
    log=None,
) -> DecoderBank:
    """One decoder per group, seeded ``seed + c``, trained on that group's speakers."""
    config = config or DecoderTrainConfig()
    sets = group_training_sets(cluster, utts_by_speaker, utterance_groups, config.leakage, config.seed)
    for c, data in enumerate(sets):
        if not data:
            raise ValueError(f"group {c} has no training utterances")
    jobs = [(data, config, (val_sets_by_group or [None] * len(sets))[c], config.seed + c) for c, data in enumerate(sets)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_train_job, jobs))
    else:
        results = []
        for c, job in enumerate(jobs):
            wrapped = None if log is None else (lambda row, c=c: log({"group": c, **row}))
            results.append(train_decoder(job[0], job[1], job[2], seed=job[3], log=wrapped))
    return DecoderBank([m for m, _ in results], cluster.digest(), [h for _, h in results])


# -- serialization ----------------------------------------------------------------


def save_decoder(model: DecoderModel, meta: dict | None = None) -> bytes:
    return dump_checkpoint(DecoderModel.kind, model.manifest(), model.state_arrays(), {"config": asdict(model.config), **(meta or {})})


def load_decoder(data: bytes) -> DecoderModel:
    kind, manifest, arrays, meta = load_checkpoint(data)
    if kind != DecoderModel.kind:
        raise ValueError(f"checkpoint holds a {kind!r} model, not a decoder")
    model = DecoderModel(DecoderConfig(**meta["config"]))
    if model.manifest() != manifest:
        raise ValueError("checkpoint layer manifest does not match its decoder config")
    model.load_arrays(arrays)
    return model


def dump_bank(bank: DecoderBank) -> bytes:
    """Magic, version, C, cluster digest, config JSON, then length-prefixed decoder checkpoints."""
    digest = bank.cluster_digest.encode("ascii")
    cfg = json.dumps(asdict(bank.config), sort_keys=True).encode()
    parts = [struct.pack("<4sHHB", BANK_MAGIC, BANK_VERSION, len(bank), len(digest)), digest, struct.pack("<I", len(cfg)), cfg]
    for c, d in enumerate(bank.decoders):
        blob = save_decoder(d, {"group": c})
        parts += [struct.pack("<I", len(blob)), blob]
    return b"".join(parts)


def load_bank(data: bytes, expected_digest: str | None = None) -> DecoderBank:
    try:
        magic, version, C, n_digest = struct.unpack_from("<4sHHB", data)
        off = struct.calcsize("<4sHHB")
        if magic != BANK_MAGIC:
            raise ValueError(f"bad bank magic {magic!r}")
        if version != BANK_VERSION:
            raise ValueError(f"unsupported bank version {version}")
        digest = data[off : off + n_digest].decode("ascii")
        off += n_digest
        (n_cfg,) = struct.unpack_from("<I", data, off)
        off += 4 + n_cfg
        decoders = []
        for _ in range(C):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            if off + n > len(data):
                raise ValueError("bank file truncated")
            decoders.append(load_decoder(data[off : off + n]))
            off += n
    except struct.error as exc:
        raise ValueError(f"bank file truncated: {exc}") from None
    if off != len(data):
        raise ValueError("trailing bytes after bank payload")
    if expected_digest is not None and digest != expected_digest:
        raise ValueError(f"bank was trained against cluster model {digest}, not {expected_digest}")
    return DecoderBank(decoders, digest)
