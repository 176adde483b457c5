from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnsc.corpus import (
    Manifest,
    ManifestEntry,
    ManifestError,
    SynthSpeakerSpec,
    default_speaker_specs,
    generate_synthetic_corpus,
    load_manifest,
    load_speaker_groups,
    save_manifest,
    split_corpus,
    synthesize_utterance,
    synthetic_utterances,
)
from pnsc.dsp.features import PITCH_WINDOW, estimate_pitch, frame_features
from pnsc.dsp.wav import read_wav
from pnsc.embed import EmbedderConfig, mean_speaker_embedding, train_embedder
from pnsc.grouping import adjusted_rand_index, kmeans_fit

FIXTURES = Path(__file__).parent / "fixtures"


class TestManifest:
    def test_empty(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("")
        assert len(load_manifest(path)) == 0

    def test_three_lines(self):
        m = load_manifest(FIXTURES / "three.tsv")
        assert len(m) == 3
        a, b, c = m.entries
        assert (a.speaker_id, a.utterance_id, a.split, a.duration) == ("spk1", "spk1_a", "train", 4.0)
        assert a.path == FIXTURES / "audio" / "spk1_a.wav"
        assert (b.split, b.duration) == ("val", 3.5)
        assert c.path == Path("/data/abs/spk2_a.wav") and c.split == "test" and c.duration == 0.0
        assert m.speakers() == ["spk1", "spk2"]

    def test_duplicate_names_line(self, tmp_path):
        path = tmp_path / "dup.tsv"
        path.write_text("s1\tu1\ta.wav\ttrain\ns1\tu2\tb.wav\ttrain\ns2\tu1\tc.wav\tval\n")
        with pytest.raises(ManifestError, match=r":3: duplicate utterance id 'u1' \(first on line 1\)"):
            load_manifest(path)

    @pytest.mark.parametrize("line", ["s1\tu1\ta.wav", "s1\tu1\ta.wav\tdev"])
    def test_malformed(self, tmp_path, line):
        path = tmp_path / "bad.tsv"
        path.write_text(line + "\n")
        with pytest.raises(ManifestError, match=":1:"):
            load_manifest(path)

    def test_save_round_trip(self, tmp_path):
        m = Manifest([ManifestEntry("s", f"u{i}", tmp_path / "w" / f"u{i}.wav", "train", 1.5) for i in range(3)])
        save_manifest(m, tmp_path / "m.tsv")
        assert load_manifest(tmp_path / "m.tsv").entries == m.entries
        assert "w/u0.wav" in (tmp_path / "m.tsv").read_text()


def speaker_manifest(n_speakers, per_speaker=2):
    return Manifest([ManifestEntry(f"s{k}", f"s{k}_{i}", Path(f"s{k}_{i}.wav")) for k in range(n_speakers) for i in range(per_speaker)])


class TestSplits:
    def test_counts(self):
        train, val, test = split_corpus(speaker_manifest(10), 2, 2, seed=0)
        assert (len(train.speakers()), len(val.speakers()), len(test.speakers())) == (6, 2, 2)
        assert {e.split for e in val} == {"val"} and {e.split for e in test} == {"test"}

    def test_overlap_rejected(self):
        with pytest.raises(ManifestError, match="both"):
            split_corpus(speaker_manifest(4), ["s0", "s1"], ["s1"])

    def test_too_many(self):
        with pytest.raises(ManifestError):
            split_corpus(speaker_manifest(3), 2, 2)

    def test_deterministic(self):
        a = split_corpus(speaker_manifest(10), 3, 2, seed=5)
        b = split_corpus(speaker_manifest(10), 3, 2, seed=5)
        assert [x.entries for x in a] == [x.entries for x in b]

    def test_round_robin_over_groups(self):
        groups = {f"s{k}": k % 2 for k in range(8)}
        _, val, _ = split_corpus(speaker_manifest(8), 2, 0, seed=1, groups=groups)
        assert sorted(groups[s] for s in val.speakers()) == [0, 1]

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 15), st.integers(0, 15), st.integers(0, 15), st.integers(0, 2**16))
    def test_speaker_disjoint(self, n, n_val, n_test, seed):
        m = speaker_manifest(n, per_speaker=1 + seed % 3)
        if n_val + n_test > n:
            with pytest.raises(ManifestError):
                split_corpus(m, n_val, n_test, seed=seed)
            return
        parts = [set(p.speakers()) for p in split_corpus(m, n_val, n_test, seed=seed)]
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
        assert set.union(*parts) == set(m.speakers())
        assert sum(len(p) for p in split_corpus(m, n_val, n_test, seed=seed)) == len(m)


class TestSynthesis:
    def test_fixed_f0_period(self):
        spec = SynthSpeakerSpec("flat", 0, (150.0, 150.0), ((500, 80), (1500, 100), (2500, 150)), jitter=0.0, seed=1)
        y = synthesize_utterance(spec, 1.0, np.random.default_rng(0))
        for start in range(0, y.size - PITCH_WINDOW, 800):
            period, corr = estimate_pitch(y[start : start + PITCH_WINDOW])
            assert period == pytest.approx(16000 / 150, abs=2.0)
            assert corr > 0.5

    def test_same_seed_identical_files(self, tmp_path):
        specs = default_speaker_specs(2, 1, seed=3)
        generate_synthetic_corpus(specs, 2, 0.5, seed=9, out_dir=tmp_path / "a")
        generate_synthetic_corpus(specs, 2, 0.5, seed=9, out_dir=tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 6  # four WAVs plus two tables
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        generate_synthetic_corpus(specs, 2, 0.5, seed=10, out_dir=tmp_path / "c")
        assert (tmp_path / "c" / "g0s0" / "g0s0_u000.wav").read_bytes() != (tmp_path / "a" / "g0s0" / "g0s0_u000.wav").read_bytes()

    def test_files_match_memory(self, tmp_path):
        specs = default_speaker_specs(1, 2, seed=4)
        corpus = generate_synthetic_corpus(specs, 2, 0.5, seed=2, out_dir=tmp_path)
        audio = synthetic_utterances(specs, 2, 0.5, seed=2)
        for e in load_manifest(tmp_path / "manifest.tsv"):
            k = int(e.utterance_id[-3:])
            np.testing.assert_array_equal(read_wav(e.path).samples, audio[e.speaker_id][k])
        assert load_speaker_groups(tmp_path / "speakers.tsv") == corpus.speaker_groups

    def test_default_groups_disjoint_f0(self):
        specs = default_speaker_specs()
        assert len(specs) == 8
        bands = {}
        for s in specs:
            lo, hi = bands.get(s.group, (np.inf, -np.inf))
            bands[s.group] = (min(lo, s.f0_range[0]), max(hi, s.f0_range[1]))
        spans = sorted(bands.values())
        assert all(a[1] < b[0] for a, b in zip(spans, spans[1:]))

    def test_needs_a_spec(self):
        with pytest.raises(ValueError):
            generate_synthetic_corpus([], 1, 1.0)


@pytest.mark.parametrize("seed", [0, 1])
def test_two_group_recovery(seed):
    """Speakers in 100-140 Hz and 200-280 Hz bands separate after encoder training."""
    bands = [(100.0, 140.0), (200.0, 280.0)]
    specs = [replace(s, f0_range=bands[s.group]) for s in default_speaker_specs(2, 3, seed=seed)]
    feats = {k: [frame_features(a) for a in v] for k, v in synthetic_utterances(specs, 6, 2.0, seed=seed).items()}
    model, _ = train_embedder({k: v[:4] for k, v in feats.items()}, EmbedderConfig(steps=150, batch_size=16, crop_frames=50, seed=seed))
    speakers = sorted(feats)
    z = np.stack([mean_speaker_embedding(model, feats[k][4:]) for k in speakers])
    cluster = kmeans_fit(z, 2, seed=seed, speaker_ids=speakers)
    planted = {s.speaker_id: s.group for s in specs}
    assert adjusted_rand_index([cluster.assignments[k] for k in speakers], [planted[k] for k in speakers]) == 1.0
