import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnsc.corpus import default_speaker_specs, synthetic_utterances
from pnsc.dsp import frame_features
from pnsc.embed import (
    EMBED_DIM,
    EmbedderConfig,
    EmbedderModel,
    TrainingDiverged,
    UtteranceTooShort,
    contrastive_loss,
    contrastive_terms,
    encode_utterance,
    export_embeddings_csv,
    load_embedder,
    mean_speaker_embedding,
    pair_loss,
    sample_pairs,
    save_embedder,
    train_embedder,
)

from conftest import numeric_grad, rel_error


def random_feats(rng, n=40):
    f = np.column_stack([rng.normal(0, 1, (n, 18)), rng.uniform(20, 200, n), rng.uniform(0, 1, n)])
    f[:, 0] -= 4
    return f


@pytest.fixture(scope="module")
def separable_features():
    """Four synthetic speakers from distinct pitch groups, 6 utterances each."""
    specs = default_speaker_specs(n_groups=4, speakers_per_group=1, seed=3)
    audio = synthetic_utterances(specs, utterances_per_speaker=6, seconds=1.0, seed=3)
    return {k: [frame_features(u) for u in utts] for k, utts in audio.items()}


class TestEncode:
    def test_zero_weights_give_zero(self, rng):
        model = EmbedderModel()
        model.load_arrays([np.zeros_like(a) for a in model.state_arrays()])
        np.testing.assert_array_equal(encode_utterance(model, random_feats(rng)), np.zeros(EMBED_DIM))

    def test_deterministic_and_dimension(self, rng):
        model = EmbedderModel(seed=5)
        f = random_feats(rng)
        z1, z2 = encode_utterance(model, f), encode_utterance(model, f.copy())
        assert z1.shape == (EMBED_DIM,)
        np.testing.assert_array_equal(z1, z2)
        assert np.isfinite(z1).all()

    def test_order_sensitive(self, rng):
        model = EmbedderModel(seed=6)
        f = random_feats(rng)
        assert np.max(np.abs(encode_utterance(model, f) - encode_utterance(model, f[::-1]))) > 1e-4

    def test_too_short(self, rng):
        with pytest.raises(UtteranceTooShort):
            encode_utterance(EmbedderModel(), random_feats(rng, 9))
        encode_utterance(EmbedderModel(), random_feats(rng, 10))

    def test_batch_matches_single(self, rng):
        model = EmbedderModel(seed=1)
        fs = [random_feats(rng, 30) for _ in range(3)]
        batch = model.forward(np.stack(fs)).data
        for f, z in zip(fs, batch):
            np.testing.assert_allclose(encode_utterance(model, f), z, rtol=0, atol=1e-13)


class TestSamplePairs:
    def test_small_batch(self, rng):
        speakers = {"a": ["a1", "a2"], "b": ["b1", "b2"]}
        pairs = sample_pairs(speakers, rng, batch_size=4)
        assert [lab for _, _, lab in pairs] == [1, 1, 0, 0]
        for (ki, ui), (kj, uj), lab in pairs:
            assert ui in speakers[ki] and uj in speakers[kj]
            if lab:
                assert ki == kj and ui != uj
            else:
                assert ki != kj

    def test_single_speaker_rejected(self, rng):
        with pytest.raises(ValueError):
            sample_pairs({"a": [1, 2, 3]}, rng, batch_size=4)

    def test_odd_batch_rejected(self, rng):
        with pytest.raises(ValueError):
            sample_pairs({"a": [1, 2], "b": [3, 4]}, rng, batch_size=5)

    def test_counting_oracle(self):
        rng = np.random.default_rng(77)
        speakers = {f"s{k}": [f"s{k}u{u}" for u in range(5)] for k in range(10)}
        n_pos = n_total = 0
        seen = set()
        for _ in range(1000):
            for (ki, ui), (kj, uj), lab in sample_pairs(speakers, rng):
                n_total += 1
                n_pos += lab
                seen.update([ki, kj])
        assert n_total == 64000
        assert n_pos / n_total == 0.5
        assert len(seen) / len(speakers) > 0.95


class TestLoss:
    def test_zero_score_positive_and_negative(self):
        z = np.zeros(EMBED_DIM)
        assert contrastive_loss(z, z, [1]).item() == pytest.approx(math.log(2), abs=1e-15)
        assert contrastive_loss(z, z, [0]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_saturated_positive(self):
        z = np.zeros(EMBED_DIM)
        z[:20] = 1.0  # |z|^2 = 20
        assert contrastive_loss(z, z, [1]).item() == pytest.approx(2.06e-9, rel=1e-2)
        assert contrastive_loss(z, z, [1]).item() == pytest.approx(-math.log(1 / (1 + math.exp(-20))), rel=1e-9)

    def test_large_scores_stay_finite(self):
        z = np.full(EMBED_DIM, 3.0)  # score 288
        assert contrastive_loss(z, z, [0]).item() == pytest.approx(288.0)
        assert contrastive_loss(z, -z, [1]).item() == pytest.approx(288.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_decomposition(self, seed):
        rng = np.random.default_rng(seed)
        zi, zj = rng.normal(0, 1, (8, EMBED_DIM)), rng.normal(0, 1, (8, EMBED_DIM))
        labels = rng.integers(0, 2, 8)
        pos, neg = contrastive_terms(zi, zj, labels)
        total = contrastive_loss(zi, zj, labels)
        assert pos.item() >= 0 and neg.item() >= 0
        assert total.item() == pytest.approx(pos.item() + neg.item(), rel=1e-14)
        # direct evaluation of the pairwise BCE
        s = (zi * zj).sum(axis=1)
        sig = 1 / (1 + np.exp(-s))
        ref = -np.sum(labels * np.log(sig) + (1 - labels) * np.log(1 - sig))
        assert total.item() == pytest.approx(ref, rel=1e-9)

    def test_mean_reduction(self, rng):
        zi, zj = rng.normal(0, 1, (6, EMBED_DIM)), rng.normal(0, 1, (6, EMBED_DIM))
        labels = [1, 1, 1, 0, 0, 0]
        assert contrastive_loss(zi, zj, labels, "mean").item() == pytest.approx(contrastive_loss(zi, zj, labels).item() / 6)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_through_encoder(self, seed):
        rng = np.random.default_rng(seed)
        model = EmbedderModel(hidden=6, seed=seed)
        left = np.stack([random_feats(rng, 12) for _ in range(4)])
        right = np.stack([random_feats(rng, 12) for _ in range(4)])
        labels = np.array([1, 1, 0, 0], dtype=float)

        def loss_value():
            return pair_loss(model, left, right, labels, reduction="sum").item()

        model.zero_grad()
        pair_loss(model, left, right, labels, reduction="sum").backward()
        for p in model.parameters():
            num = numeric_grad(loss_value, p.data)
            assert rel_error(p.grad, num) < 1e-6


class TestMeanEmbedding:
    def test_single(self, rng):
        z = rng.normal(0, 1, EMBED_DIM)
        np.testing.assert_array_equal(mean_speaker_embedding(None, [z]), z)

    def test_two_basis_vectors(self):
        a, b = np.zeros(EMBED_DIM), np.zeros(EMBED_DIM)
        a[0], b[1] = 1, 1
        expected = np.zeros(EMBED_DIM)
        expected[:2] = 0.5
        np.testing.assert_array_equal(mean_speaker_embedding(None, [a, b]), expected)

    def test_summation_oracle(self, rng):
        zs = rng.normal(0, 3, (100, EMBED_DIM))
        ref = np.array([math.fsum(zs[:, d]) / 100 for d in range(EMBED_DIM)])
        np.testing.assert_allclose(mean_speaker_embedding(None, list(zs)), ref, rtol=0, atol=1e-12)

    def test_permutation_invariant(self, rng):
        zs = list(rng.normal(0, 1, (20, EMBED_DIM)))
        perm = [zs[i] for i in rng.permutation(20)]
        np.testing.assert_allclose(mean_speaker_embedding(None, zs), mean_speaker_embedding(None, perm), atol=1e-14)

    def test_from_features(self, rng):
        model = EmbedderModel(seed=2)
        fs = [random_feats(rng) for _ in range(3)]
        np.testing.assert_allclose(
            mean_speaker_embedding(model, fs), np.mean([encode_utterance(model, f) for f in fs], axis=0), atol=1e-15
        )

    def test_empty(self):
        with pytest.raises(ValueError):
            mean_speaker_embedding(None, [])


class TestTraining:
    def test_zero_steps_is_init(self, separable_features):
        config = EmbedderConfig(steps=0, batch_size=8, crop_frames=40, seed=4)
        model, history = train_embedder(separable_features, config)
        init = EmbedderModel(seed=4)
        for a, b in zip(model.state_arrays(), init.state_arrays()):
            np.testing.assert_array_equal(a, b)
        assert [row["step"] for row in history] == [0]

    def test_deterministic_history(self, separable_features):
        config = EmbedderConfig(steps=6, batch_size=8, crop_frames=40, eval_every=3, seed=1)
        _, h1 = train_embedder(separable_features, config)
        _, h2 = train_embedder(separable_features, config)
        strip = lambda h: [(r["step"], r["loss"], r["val_loss"]) for r in h]
        assert strip(h1)[1:] == strip(h2)[1:]
        assert h1[0]["val_loss"] == h2[0]["val_loss"]

    def test_needs_two_speakers(self, separable_features):
        one = dict(list(separable_features.items())[:1])
        with pytest.raises(ValueError):
            train_embedder(one, EmbedderConfig(steps=1))

    def test_divergence_reports_last_good(self, separable_features):
        config = EmbedderConfig(steps=3, batch_size=8, crop_frames=40, seed=0)
        bad = {k: [f.copy() for f in v] for k, v in separable_features.items()}
        first = next(iter(bad))
        for f in bad[first]:
            f[:, 1] = np.inf
        with np.errstate(all="ignore"), pytest.raises(TrainingDiverged) as exc:
            train_embedder(bad, config)
        for a in exc.value.last_good.state_arrays():
            assert np.isfinite(a).all()
        assert exc.value.history

    def test_separation_after_training(self, separable_features):
        config = EmbedderConfig(steps=200, batch_size=16, crop_frames=50, eval_every=50, seed=0)
        model, history = train_embedder(separable_features, config)
        assert history[-1]["val_loss"] < history[0]["val_loss"]
        embs = {k: [encode_utterance(model, f) for f in v] for k, v in separable_features.items()}
        within, across = [], []
        keys = list(embs)
        for a in range(len(keys)):
            for b in range(a, len(keys)):
                for i, zi in enumerate(embs[keys[a]]):
                    for j, zj in enumerate(embs[keys[b]]):
                        if a == b and i >= j:
                            continue
                        (within if a == b else across).append(zi @ zj)
        assert np.mean(within) - np.mean(across) > 0


def test_checkpoint_round_trip(rng):
    model = EmbedderModel(seed=9)
    back = load_embedder(save_embedder(model, EmbedderConfig()))
    f = random_feats(rng)
    np.testing.assert_allclose(encode_utterance(back, f), encode_utterance(model, f), atol=1e-5)
    assert save_embedder(back) == save_embedder(load_embedder(save_embedder(back)))


def test_export_csv(tmp_path, rng):
    rows = [("s0", "u0", rng.normal(0, 1, EMBED_DIM)), ("s1", "u1", rng.normal(0, 1, EMBED_DIM))]
    path = tmp_path / "emb.csv"
    export_embeddings_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["speaker_id", "utterance_id", "z0"]
    assert lines[0].split(",")[-1] == "z31"
    assert float(lines[1].split(",")[2]) == rows[0][2][0]
