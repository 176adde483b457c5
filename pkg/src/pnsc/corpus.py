"""Speaker manifests, speaker-disjoint splits, and a synthetic voiced-speech corpus.

The synthetic corpus stands in for a real read-speech corpus at desk scale.
Each speaker is a glottal source (jittered pulse train plus aspiration noise)
driven through a cascade of formant resonators. Speakers of one group share
an F0 band and a formant template, which plants a recoverable group
structure.
"""

from __future__ import annotations

import csv
import io
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsp.wav import SAMPLE_RATE, read_wav, write_wav
from .fileio import atomic_write

SPLITS = ("train", "val", "test")
_HEADER = ["speaker_id", "utterance_id", "path", "split", "duration"]


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    speaker_id: str
    utterance_id: str
    path: Path
    split: str = "train"
    duration: float = 0.0


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def speakers(self) -> list[str]:
        return list(OrderedDict.fromkeys(e.speaker_id for e in self.entries))

    def by_speaker(self) -> dict[str, list[ManifestEntry]]:
        out: dict[str, list[ManifestEntry]] = OrderedDict()
        for e in self.entries:
            out.setdefault(e.speaker_id, []).append(e)
        return out

    def select(self, speakers=None, split: str | None = None) -> "Manifest":
        keep = None if speakers is None else set(speakers)
        return Manifest(
            [e for e in self.entries if (keep is None or e.speaker_id in keep) and (split is None or e.split == split)]
        )

    def with_split(self, split: str) -> "Manifest":
        return Manifest([replace(e, split=split) for e in self.entries])


def load_manifest(path) -> Manifest:
    """Read a tab-separated manifest; relative paths resolve against its directory.

    Columns: speaker_id, utterance_id, path, split[, duration]. A header
    line starting with ``speaker_id`` is optional.
    """
    path = Path(path)
    root = path.parent
    entries = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or (lineno == 1 and row[0] == "speaker_id"):
                continue
            if len(row) not in (4, 5):
                raise ManifestError(f"{path}:{lineno}: expected 4 or 5 tab-separated columns, got {len(row)}")
            spk, utt, rel, split = row[:4]
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
            if utt in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance id {utt!r} (first on line {seen[utt]})")
            seen[utt] = lineno
            duration = float(row[4]) if len(row) == 5 else 0.0
            p = Path(rel)
            entries.append(ManifestEntry(spk, utt, p if p.is_absolute() else root / p, split, duration))
    return Manifest(entries)


def save_manifest(manifest: Manifest, path) -> None:
    """Write the manifest atomically; paths under its directory are stored relative."""
    path = Path(path)
    root = path.parent.resolve()
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(_HEADER)
    for e in manifest:
        p = Path(e.path)
        try:
            p = p.resolve().relative_to(root)
        except ValueError:
            pass
        w.writerow([e.speaker_id, e.utterance_id, p.as_posix(), e.split, f"{e.duration:.4f}"])
    atomic_write(path, buf.getvalue())


def load_audio(entry: ManifestEntry) -> np.ndarray:
    return read_wav(entry.path).samples


def split_corpus(manifest: Manifest, validation_speakers, test_speakers, seed: int = 0, groups: dict | None = None):
    """Speaker-disjoint train/val/test split.

    ``validation_speakers`` and ``test_speakers`` are either counts (drawn
    with ``seed``, round-robin across ``groups`` when given) or explicit
    speaker-id lists.
    """
    speakers = manifest.speakers()
    rng = np.random.default_rng(seed)
    if isinstance(validation_speakers, int) or isinstance(test_speakers, int):
        n_val = validation_speakers if isinstance(validation_speakers, int) else len(validation_speakers)
        n_test = test_speakers if isinstance(test_speakers, int) else len(test_speakers)
        if n_val < 0 or n_test < 0 or n_val + n_test > len(speakers):
            raise ManifestError(f"cannot hold out {n_val}+{n_test} of {len(speakers)} speakers")
        order = _draw_order(speakers, rng, groups)
        val = list(validation_speakers) if not isinstance(validation_speakers, int) else None
        test = list(test_speakers) if not isinstance(test_speakers, int) else None
        taken = set(val or []) | set(test or [])
        pool = [s for s in order if s not in taken]
        if val is None:
            val, pool = pool[:n_val], pool[n_val:]
        if test is None:
            test = pool[:n_test]
    else:
        val, test = list(validation_speakers), list(test_speakers)
    overlap = set(val) & set(test)
    if overlap:
        raise ManifestError(f"speakers requested for both validation and test: {sorted(overlap)}")
    unknown = (set(val) | set(test)) - set(speakers)
    if unknown:
        raise ManifestError(f"unknown speakers {sorted(unknown)}")
    held = set(val) | set(test)
    train = [s for s in speakers if s not in held]
    return (
        manifest.select(train).with_split("train"),
        manifest.select(val).with_split("val"),
        manifest.select(test).with_split("test"),
    )


def _draw_order(speakers, rng, groups):
    if not groups:
        return [speakers[i] for i in rng.permutation(len(speakers))]
    buckets: dict = OrderedDict()
    for s in speakers:
        buckets.setdefault(groups[s], []).append(s)
    shuffled = [[b[i] for i in rng.permutation(len(b))] for b in buckets.values()]
    order = []
    for i in range(max(len(b) for b in shuffled)):
        order.extend(b[i] for b in shuffled if i < len(b))
    return order


# -- synthetic speakers ----------------------------------------------------------


@dataclass(frozen=True)
class SynthSpeakerSpec:
    speaker_id: str
    group: int
    f0_range: tuple[float, float]
    formants: tuple[tuple[float, float], ...]  # (centre Hz, bandwidth Hz)
    jitter: float = 0.01
    breathiness: float = 0.02
    pulse_width: int = 8
    seed: int = 0

    def filter_coefficients(self) -> np.ndarray:
        """All-pole denominator of the cascaded formant resonators."""
        den = np.array([1.0])
        for freq, bw in self.formants:
            radius = np.exp(-np.pi * bw / SAMPLE_RATE)
            theta = 2 * np.pi * freq / SAMPLE_RATE
            den = np.convolve(den, [1.0, -2 * radius * np.cos(theta), radius * radius])
        return den


# One template per planted group: F0 band, formants, source shape.
GROUP_TEMPLATES = [
    dict(f0=(95.0, 120.0), formants=((450, 70), (1100, 90), (2400, 140)), jitter=0.005, breathiness=0.005, pulse_width=20),
    dict(f0=(220.0, 270.0), formants=((850, 110), (1900, 140), (3300, 220)), jitter=0.012, breathiness=0.03, pulse_width=6),
    dict(f0=(140.0, 175.0), formants=((650, 90), (1500, 110), (2800, 180)), jitter=0.01, breathiness=0.02, pulse_width=12),
    dict(f0=(300.0, 360.0), formants=((350, 60), (2300, 160), (3600, 250)), jitter=0.015, breathiness=0.06, pulse_width=5),
]


def default_speaker_specs(n_groups: int = 4, speakers_per_group: int = 2, seed: int = 0) -> list[SynthSpeakerSpec]:
    """Speakers with group-disjoint F0 bands and group-specific formant templates."""
    if not 1 <= n_groups <= len(GROUP_TEMPLATES):
        raise ValueError(f"n_groups must be in 1..{len(GROUP_TEMPLATES)}")
    rng = np.random.default_rng([seed, 7919])
    specs = []
    for g in range(n_groups):
        tpl = GROUP_TEMPLATES[g]
        lo, hi = tpl["f0"]
        for k in range(speakers_per_group):
            # Each speaker gets a sub-band of the group band and nudged formants.
            centre = rng.uniform(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo))
            half = 0.25 * (hi - lo)
            formants = tuple((f * rng.uniform(0.97, 1.03), bw) for f, bw in tpl["formants"])
            specs.append(
                SynthSpeakerSpec(
                    speaker_id=f"g{g}s{k}",
                    group=g,
                    f0_range=(centre - half, centre + half),
                    formants=formants,
                    jitter=tpl["jitter"],
                    breathiness=tpl["breathiness"],
                    pulse_width=tpl["pulse_width"],
                    seed=int(rng.integers(2**31)),
                )
            )
    return specs


def _glottal_pulse(width: int) -> np.ndarray:
    # Derivative of a raised-cosine pulse: a band-limited glottal-flow derivative.
    n = np.arange(width + 1)
    flow = 0.5 - 0.5 * np.cos(2 * np.pi * n / width)
    return np.diff(flow) * width / np.pi


def synthesize_utterance(spec: SynthSpeakerSpec, seconds: float, rng: np.random.Generator) -> np.ndarray:
    """One utterance as float samples in [-1, 1)."""
    n = int(round(seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    lo, hi = spec.f0_range
    # Slow intonation contour within the speaker's F0 range.
    rate = rng.uniform(0.4, 1.2)
    phase = rng.uniform(0, 2 * np.pi)
    f0 = lo + (hi - lo) * (0.5 + 0.5 * np.sin(2 * np.pi * rate * t + phase))
    source = np.zeros(n)
    pos = rng.uniform(0, SAMPLE_RATE / f0[0])
    while pos < n:
        i = int(pos)
        source[i] += 1.0
        period = SAMPLE_RATE / f0[i] * (1.0 + spec.jitter * rng.standard_normal())
        pos += max(period, 2.0)
    source = np.convolve(source, _glottal_pulse(spec.pulse_width))[:n]
    source += spec.breathiness * rng.standard_normal(n)
    voiced = lfilter([1.0], spec.filter_coefficients(), source)
    # Syllable-rate loudness modulation.
    syl = rng.uniform(3.0, 5.0)
    env = 0.55 + 0.45 * np.sin(2 * np.pi * syl * t + rng.uniform(0, 2 * np.pi))
    y = voiced * env
    y = 0.5 * y / (np.abs(y).max() + 1e-12)
    y += 1e-3 * rng.standard_normal(n)
    # Land on the PCM16 grid so written files reproduce the in-memory signal.
    return np.clip(np.round(y * 32768.0), -32768, 32767) / 32768.0


@dataclass
class SynthCorpus:
    manifest: Manifest
    specs: list[SynthSpeakerSpec]

    @property
    def speaker_groups(self) -> dict[str, int]:
        return {s.speaker_id: s.group for s in self.specs}


def generate_synthetic_corpus(
    specs: list[SynthSpeakerSpec],
    utterances_per_speaker: int = 12,
    seconds: float = 4.0,
    seed: int = 0,
    out_dir=None,
) -> SynthCorpus:
    """Generate and (when ``out_dir`` is given) write WAVs plus ``manifest.tsv``/``speakers.tsv``."""
    if not specs:
        raise ValueError("need at least one speaker spec")
    entries = []
    out = Path(out_dir) if out_dir is not None else None
    for si, spec in enumerate(specs):
        for u in range(utterances_per_speaker):
            utt_id = f"{spec.speaker_id}_u{u:03d}"
            path = (out / spec.speaker_id / f"{utt_id}.wav") if out else Path(f"{spec.speaker_id}/{utt_id}.wav")
            if out is not None:
                rng = np.random.default_rng([seed, spec.seed, u])
                write_wav(path, synthesize_utterance(spec, seconds, rng))
            entries.append(ManifestEntry(spec.speaker_id, utt_id, path, "train", seconds))
    corpus = SynthCorpus(Manifest(entries), list(specs))
    if out is not None:
        save_manifest(corpus.manifest, out / "manifest.tsv")
        table = "".join(f"{s.speaker_id}\t{s.group}\n" for s in specs)
        atomic_write(out / "speakers.tsv", "speaker_id\tgroup\n" + table)
    return corpus


def synthetic_utterances(specs, utterances_per_speaker: int, seconds: float, seed: int = 0):
    """In-memory variant: ``{speaker_id: [samples, ...]}`` identical to the written files."""
    return {
        spec.speaker_id: [
            synthesize_utterance(spec, seconds, np.random.default_rng([seed, spec.seed, u]))
            for u in range(utterances_per_speaker)
        ]
        for spec in specs
    }


def load_speaker_groups(path) -> dict[str, int]:
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if row and row[0] != "speaker_id":
                groups[row[0]] = int(row[1])
    return groups
