"""``pnsc`` command line: corpus, embedder, clustering, decoder bank, codec and evaluation.

Every command reads a :class:`PipelineConfig` built from defaults, an optional
``key = value`` file (``--config``), ``PNSC_<KEY>`` environment variables and
finally command-line flags, in increasing precedence. Artifacts live in the
``--out`` directory and are written atomically; each command appends JSON
lines to ``<out>/logs/<command>.jsonl``.

Exit status: 0 on success, 2 on invalid input or a missing prerequisite,
3 when training diverges (the last good model is saved next to the target).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .bitstream import StreamError, StreamHeader, bitrate, encode_features, pack_stream
from .corpus import Manifest, default_speaker_specs, generate_synthetic_corpus, load_audio, load_manifest, save_manifest, split_corpus
from .decoder import (
    PRESETS,
    DecoderModel,
    DecoderTrainConfig,
    decode_dispatch,
    dump_bank,
    load_bank,
    load_decoder,
    prepare_utterance,
    save_decoder,
    train_bank,
    train_decoder,
)
from .dsp.features import frame_features
from .dsp.wav import WavFormatError, read_wav, write_wav
from .embed import EmbedderConfig, EmbedderModel, encode_utterance, export_embeddings_csv, load_embedder, save_embedder, train_embedder
from .evaluation import epoch_curves, evaluate, snr, write_report
from .fileio import RunLog, atomic_write, read_log
from .grouping import classify, dump_cluster_model, group_assignments, kmeans_fit, load_cluster_model
from .nn import CheckpointError, TrainingDiverged

ENV_PREFIX = "PNSC_"


class ConfigError(ValueError):
    pass


class MissingArtifact(ValueError):
    def __init__(self, what: str, path: Path, command: str, out: Path):
        super().__init__(f"{what} not found at {path}; run `pnsc {command} --out {out}` first")


@dataclass
class PipelineConfig:
    n_groups: int = 4
    seed: int = 0
    workers: int = 1
    # corpus
    manifest: str = ""
    corpus_groups: int = 4
    speakers_per_group: int = 3
    utterances_per_speaker: int = 12
    utterance_seconds: float = 4.0
    val_speakers: int = 4
    test_speakers: int = 0
    # speaker encoder
    embed_hidden: int = 32
    embed_batch: int = 64
    embed_steps: int = 300
    embed_crop: int = 100
    embed_lr: float = 1e-3
    embed_eval_every: int = 25
    # decoders
    decoder_preset: str = "small"
    epochs: int = 10
    steps_per_epoch: int = 25
    batch_size: int = 64
    chunk_frames: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    clip: float = 5e-2
    leakage: float = 0.05
    val_utterances: int = 3
    # codec and evaluation
    classify_utterances: int = 5
    snr_utterances: int = 2
    decode_mode: str = "sample"
    temperature: float = 1.0

    def validate(self) -> None:
        if self.n_groups < 1:
            raise ConfigError("n_groups must be at least 1")
        non_negative = {"seed", "val_speakers", "test_speakers", "snr_utterances"}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, str) or f.name == "leakage":
                continue
            if f.name in non_negative:
                if value < 0:
                    raise ConfigError(f"{f.name} must be non-negative, got {value}")
            elif value <= 0:
                raise ConfigError(f"{f.name} must be positive, got {value}")
        if not 0.0 <= self.leakage <= 1.0:
            raise ConfigError("leakage must lie in [0, 1]")
        for name in ("beta1", "beta2"):
            if not getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be below 1")
        if self.embed_batch % 2:
            raise ConfigError("embed_batch must be even (half positive, half negative pairs)")
        if self.decoder_preset not in PRESETS:
            raise ConfigError(f"decoder_preset must be one of {sorted(PRESETS)}")
        if self.decode_mode not in ("sample", "argmax"):
            raise ConfigError("decode_mode must be 'sample' or 'argmax'")

    def embedder_config(self) -> EmbedderConfig:
        return EmbedderConfig(
            hidden=self.embed_hidden,
            batch_size=self.embed_batch,
            steps=self.embed_steps,
            crop_frames=self.embed_crop,
            lr=self.embed_lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eval_every=self.embed_eval_every,
            seed=self.seed,
        )

    def decoder_config(self) -> DecoderTrainConfig:
        return DecoderTrainConfig(
            preset=self.decoder_preset,
            epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch,
            batch_size=self.batch_size,
            chunk_frames=self.chunk_frames,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            clip=self.clip,
            seed=self.seed,
            leakage=self.leakage,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, raw: str, origin: str):
    if key not in _FIELDS:
        raise ConfigError(f"{origin}: unknown config key {key!r}")
    kind = type(getattr(PipelineConfig(), key))
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{origin}: {key} expects {kind.__name__}, got {raw!r}") from None
    return raw


def parse_config_text(text: str, origin: str = "config") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(key, raw, f"{origin}:{lineno}")
    return values


def load_config(path=None, env=None, overrides=None) -> PipelineConfig:
    """Defaults, then file, then ``PNSC_<KEY>`` environment, then explicit overrides."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    env = os.environ if env is None else env
    for key in _FIELDS:
        name = ENV_PREFIX + key.upper()
        if name in env:
            values[key] = _coerce(key, env[name], name)
    for key, raw in (overrides or {}).items():
        values[key] = raw if not isinstance(raw, str) else _coerce(key, raw, "--set")
    config = PipelineConfig(**values)
    config.validate()
    return config


# -- artifact layout --------------------------------------------------------------


@dataclass
class Workspace:
    out: Path
    config: PipelineConfig

    @property
    def corpus_dir(self) -> Path:
        return self.out / "corpus"

    @property
    def manifest_path(self) -> Path:
        return Path(self.config.manifest) if self.config.manifest else self.corpus_dir / "manifest.tsv"

    embedder = property(lambda self: self.out / "embedder.ckpt")
    clusters = property(lambda self: self.out / "clusters.bin")
    bank = property(lambda self: self.out / "bank.bin")
    generic = property(lambda self: self.out / "generic.ckpt")
    embeddings = property(lambda self: self.out / "embeddings.csv")

    def log(self, command: str) -> RunLog:
        return RunLog(self.out / "logs" / f"{command}.jsonl", command)

    def require(self, path: Path, what: str, command: str) -> bytes:
        if not path.is_file():
            raise MissingArtifact(what, path, command, self.out)
        return path.read_bytes()

    def load_manifest(self) -> Manifest:
        if not self.manifest_path.is_file():
            raise MissingArtifact("corpus manifest", self.manifest_path, "gen-corpus", self.out)
        return load_manifest(self.manifest_path)

    def load_embedder(self) -> EmbedderModel:
        return load_embedder(self.require(self.embedder, "speaker encoder checkpoint", "train-embedder"))

    def load_clusters(self):
        return load_cluster_model(self.require(self.clusters, "cluster model", "cluster"))


def _utterance_features(manifest: Manifest) -> dict:
    return {spk: [frame_features(load_audio(e)) for e in entries] for spk, entries in manifest.by_speaker().items()}


def _speaker_means(model: EmbedderModel, features: dict) -> dict:
    return {spk: np.mean([encode_utterance(model, f) for f in feats], axis=0) for spk, feats in features.items()}


def _classify_speakers(model, cluster, features: dict) -> dict:
    return {spk: classify(z, cluster).group for spk, z in _speaker_means(model, features).items()}


def _validation_sets(ws: Workspace, model, cluster):
    """Validation speakers, their classified groups and prepared (capped) utterances."""
    val = ws.load_manifest().select(split="val")
    if not len(val):
        raise ConfigError("manifest has no validation speakers; set val_speakers and rerun gen-corpus")
    cap = ws.config.val_utterances
    capped = Manifest([e for entries in val.by_speaker().values() for e in entries[:cap]])
    groups = _classify_speakers(model, cluster, _utterance_features(capped))
    utts = {spk: [prepare_utterance(load_audio(e)) for e in entries] for spk, entries in capped.by_speaker().items()}
    return utts, groups


def _grouped_val_sets(val_utts: dict, val_groups: dict, n_groups: int):
    per_group = []
    for c in range(n_groups):
        speakers = sorted(s for s, g in val_groups.items() if g == c)
        per_group.append([(len(speakers), [u for s in speakers for u in val_utts[s]])] if speakers else None)
    return per_group


# -- commands ---------------------------------------------------------------------


def cmd_gen_corpus(ws: Workspace, args) -> int:
    cfg = ws.config
    specs = default_speaker_specs(cfg.corpus_groups, cfg.speakers_per_group, cfg.seed)
    corpus = generate_synthetic_corpus(specs, cfg.utterances_per_speaker, cfg.utterance_seconds, cfg.seed, ws.corpus_dir)
    train, val, test = split_corpus(corpus.manifest, cfg.val_speakers, cfg.test_speakers, cfg.seed, corpus.speaker_groups)
    merged = Manifest(train.entries + val.entries + test.entries)
    save_manifest(merged, ws.corpus_dir / "manifest.tsv")
    ws.log("gen-corpus")({"event": "done", "speakers": len(specs), "utterances": len(merged), "val": val.speakers(), "test": test.speakers()})
    print(f"wrote {len(merged)} utterances from {len(specs)} speakers to {ws.corpus_dir}")
    return 0


def cmd_train_embedder(ws: Workspace, args) -> int:
    manifest = ws.load_manifest()
    train = manifest.select(split="train")
    if len(train.speakers()) < 2:
        raise ConfigError("speaker encoder training needs at least two training speakers")
    log = ws.log("train-embedder")
    cfg = ws.config.embedder_config()
    log({"event": "start", "config": asdict(cfg), "speakers": train.speakers()})
    val = manifest.select(split="val")
    model, history = train_embedder(_utterance_features(train), cfg, _utterance_features(val) if len(val) else None, log=log)
    atomic_write(ws.embedder, save_embedder(model, cfg))
    log({"event": "done", "final_val_loss": history[-1]["val_loss"]})
    print(f"speaker encoder saved to {ws.embedder}")
    return 0


def cmd_export_embeddings(ws: Workspace, args) -> int:
    model = ws.load_embedder()
    manifest = ws.load_manifest()
    rows = [(e.speaker_id, e.utterance_id, encode_utterance(model, frame_features(load_audio(e)))) for e in manifest]
    export_embeddings_csv(ws.embeddings, rows)
    ws.log("export-embeddings")({"event": "done", "rows": len(rows)})
    print(f"wrote {len(rows)} embeddings to {ws.embeddings}")
    return 0


def cmd_cluster(ws: Workspace, args) -> int:
    model = ws.load_embedder()
    train = ws.load_manifest().select(split="train")
    means = _speaker_means(model, _utterance_features(train))
    speakers = sorted(means)
    if ws.config.n_groups > len(speakers):
        raise ConfigError(f"n_groups={ws.config.n_groups} exceeds the {len(speakers)} training speakers")
    cluster = kmeans_fit(np.stack([means[s] for s in speakers]), ws.config.n_groups, ws.config.seed, speakers)
    atomic_write(ws.clusters, dump_cluster_model(cluster))
    groups = group_assignments(cluster)
    ws.log("cluster")({"event": "done", "groups": groups, "inertia": cluster.inertia, "inertia_history": cluster.inertia_history, "digest": cluster.digest()})
    for c, members in enumerate(groups):
        print(f"group {c}: {' '.join(members)}")
    return 0


def cmd_train_bank(ws: Workspace, args) -> int:
    cfg = ws.config
    model = ws.load_embedder()
    cluster = ws.load_clusters()
    manifest = ws.load_manifest()
    train = manifest.select(split="train")
    missing = sorted(set(train.speakers()) - set(cluster.assignments))
    if missing:
        raise ConfigError(f"training speakers {missing} are not in the cluster model; rerun `pnsc cluster --out {ws.out}`")
    feats = _utterance_features(train)
    utterance_groups = {(spk, i): classify(encode_utterance(model, f), cluster).group for spk, fs in feats.items() for i, f in enumerate(fs)}
    utts = {spk: [prepare_utterance(load_audio(e)) for e in entries] for spk, entries in train.by_speaker().items()}
    val_by_group = None
    generic_val = None
    if len(manifest.select(split="val")):
        val_utts, val_groups = _validation_sets(ws, model, cluster)
        val_by_group = _grouped_val_sets(val_utts, val_groups, cluster.n_groups)
        generic_val = [vs[0] for vs in val_by_group if vs]
    dcfg = cfg.decoder_config()
    log = ws.log("train-bank")
    log({"event": "start", "config": asdict(dcfg), "n_groups": cluster.n_groups, "cluster": cluster.digest()})

    def bank_log(row):
        log({"model": "bank", **row})

    bank = train_bank(cluster, utts, dcfg, val_by_group, utterance_groups, workers=cfg.workers, log=bank_log if cfg.workers <= 1 else None)
    if cfg.workers > 1:
        for c, hist in enumerate(bank.histories):
            for row in hist:
                bank_log({"group": c, **row})
    generic, _ = train_decoder([u for s in sorted(utts) for u in utts[s]], dcfg, generic_val, seed=dcfg.seed, log=lambda row: log({"model": "generic", **row}))
    atomic_write(ws.bank, dump_bank(bank))
    atomic_write(ws.generic, save_decoder(generic))
    log({"event": "done", "checksums": bank.checksums(), "generic": generic.checksum()})
    print(f"bank of {len(bank)} decoders saved to {ws.bank}; generic decoder saved to {ws.generic}")
    return 0


def _encode_wav(model, cluster, samples, references) -> tuple[bytes, int]:
    embs = [encode_utterance(model, frame_features(r)) for r in references]
    group = classify(np.mean(embs, axis=0), cluster).group
    packets = encode_features(frame_features(samples))
    return pack_stream(StreamHeader(n_groups=cluster.n_groups, group_index=group), packets), group


def cmd_encode(ws: Workspace, args) -> int:
    model = ws.load_embedder()
    cluster = ws.load_clusters()
    audio = read_wav(args.input)
    refs = [read_wav(p).samples for p in (args.reference or [])][: ws.config.classify_utterances] or [audio.samples]
    data, group = _encode_wav(model, cluster, audio.samples, refs)
    target = Path(args.output) if args.output else ws.out / "streams" / (Path(args.input).stem + ".pnsc")
    atomic_write(target, data)
    ws.log("encode")({"event": "done", "input": str(args.input), "output": str(target), "group": group, "bytes": len(data)})
    print(f"{target}: group {group}, {len(data)} bytes")
    return 0


def _load_bank(ws: Workspace):
    data = ws.require(ws.bank, "decoder bank", "train-bank")
    expected = load_cluster_model(ws.clusters.read_bytes()).digest() if ws.clusters.is_file() else None
    return load_bank(data, expected)


def cmd_decode(ws: Workspace, args) -> int:
    bank = _load_bank(ws)
    data = Path(args.input).read_bytes()
    out = decode_dispatch(bank, data, mode=ws.config.decode_mode, rng=np.random.default_rng(ws.config.seed), temperature=ws.config.temperature)
    target = Path(args.output) if args.output else ws.out / "decoded" / (Path(args.input).stem + ".wav")
    write_wav(target, out.samples)
    ws.log("decode")({"event": "done", "input": str(args.input), "output": str(target), "group": out.header.group_index, "samples": int(out.samples.size), "error": None if out.complete else str(out.error)})
    if not out.complete:
        print(f"warning: {out.error}; wrote the {out.samples.size} samples before it to {target}", file=sys.stderr)
        return 2
    print(f"{target}: {out.samples.size} samples via decoder {out.header.group_index}")
    return 0


def _last_run(rows: list[dict]) -> list[dict]:
    starts = [i for i, r in enumerate(rows) if r.get("event") == "start"]
    return rows[starts[-1] + 1 :] if starts else rows


def cmd_evaluate(ws: Workspace, args) -> int:
    model = ws.load_embedder()
    cluster = ws.load_clusters()
    bank = _load_bank(ws)
    generic = load_decoder(ws.require(ws.generic, "generic decoder", "train-bank"))
    val_utts, val_groups = _validation_sets(ws, model, cluster)
    report = evaluate(bank, generic, val_utts, val_groups, ws.config.chunk_frames)

    log_path = ws.out / "logs" / "train-bank.jsonl"
    if log_path.is_file():
        rows = [r for r in _last_run(read_log(log_path)) if "epoch" in r]
        bank_hist = [[r for r in rows if r.get("model") == "bank" and r.get("group") == c] for c in range(len(bank))]
        generic_hist = [r for r in rows if r.get("model") == "generic"]
        if all(bank_hist[c] for c in range(len(bank)) if report.group_sizes[c]):
            report.epochs = epoch_curves(bank_hist, report.group_sizes, generic_hist or None)

    rng = np.random.default_rng(ws.config.seed)
    val = ws.load_manifest().select(split="val")
    rates = []
    for entry in val.entries[: ws.config.snr_utterances]:
        samples = load_audio(entry)
        data, _ = _encode_wav(model, cluster, samples, [samples])
        out = decode_dispatch(bank, data, mode=ws.config.decode_mode, rng=rng, temperature=ws.config.temperature)
        report.snr_db[entry.utterance_id] = snr(samples, out.samples)
        rates.append(bitrate(data))
    report.bitrate = float(np.mean(rates)) if rates else None

    js, cs = write_report(report, ws.out)
    ws.log("evaluate")({"event": "done", "weighted_loss": report.weighted_loss, "generic_loss": report.generic_loss, "n_total": report.n_total})
    gain = report.relative_gain
    print(f"weighted bank loss {report.weighted_loss:.4f}, generic {report.generic_loss:.4f}" + (f" ({100 * gain:+.2f}% relative)" if gain is not None else ""))
    print(f"report written to {js} and {cs}")
    return 0


COMMANDS = {
    "gen-corpus": (cmd_gen_corpus, "generate the synthetic multi-group corpus and its manifest"),
    "train-embedder": (cmd_train_embedder, "train the Siamese speaker encoder"),
    "export-embeddings": (cmd_export_embeddings, "write per-utterance embeddings as CSV"),
    "cluster": (cmd_cluster, "k-means over mean speaker embeddings"),
    "train-bank": (cmd_train_bank, "train one decoder per group plus a generic decoder"),
    "encode": (cmd_encode, "WAV to bitstream, classifying the speaker group"),
    "decode": (cmd_decode, "bitstream to WAV with the decoder named in its header"),
    "evaluate": (cmd_evaluate, "weighted validation loss, SNR and bitrate report"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--out", type=Path, default=Path("pnsc-run"), help="artifact directory (default: pnsc-run)")
    common.add_argument("--seed", type=int, help="master seed (overrides config and environment)")
    common.add_argument("--workers", type=int, help="parallel workers for per-group decoder training")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    parser = argparse.ArgumentParser(prog="pnsc", description="Speaker-grouped neural speech codec pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("encode", "decode"):
            p.add_argument("input", type=Path)
            p.add_argument("-o", "--output", type=Path)
        if name == "encode":
            p.add_argument("--reference", type=Path, action="append", help="extra WAVs of the same speaker for classification")
    return parser


def _save_last_good(ws: Workspace, exc: TrainingDiverged) -> Path | None:
    model = exc.last_good
    if isinstance(model, EmbedderModel):
        target, blob = ws.out / "embedder.last-good.ckpt", save_embedder(model)
    elif isinstance(model, DecoderModel):
        target, blob = ws.out / "decoder.last-good.ckpt", save_decoder(model)
    else:
        return None
    return atomic_write(target, blob)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ws = None
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.workers is not None:
            overrides["workers"] = args.workers
        ws = Workspace(args.out, load_config(args.config, overrides=overrides))
        started = time.perf_counter()
        status = COMMANDS[args.command][0](ws, args)
        ws.log(args.command)({"event": "exit", "status": status, "wall_time": time.perf_counter() - started})
        return status
    except TrainingDiverged as exc:
        saved = _save_last_good(ws, exc) if ws is not None else None
        print(f"error: training diverged: {exc}" + (f"; last good model saved to {saved}" if saved else ""), file=sys.stderr)
        return 3
    except (ValueError, StreamError, WavFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
