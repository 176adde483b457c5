import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from pnsc.grouping import (
    ClusterFormatError,
    ClusterModel,
    adjusted_rand_index,
    classify,
    dump_cluster_model,
    group_assignments,
    kmeans_fit,
    load_cluster_model,
)


def best_two_partition(points):
    """Exhaustive minimum within-cluster sum of squares over all 2-partitions."""
    n = len(points)
    best, best_labels = np.inf, None
    for mask in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + mask)
        if labels.min() == labels.max():
            continue
        sse = sum(((points[labels == c] - points[labels == c].mean(axis=0)) ** 2).sum() for c in (0, 1))
        if sse < best:
            best, best_labels = sse, labels
    return best, best_labels


class TestKMeans:
    def test_two_points(self):
        pts = np.zeros((2, 32))
        pts[1, 0] = 10.0
        m = kmeans_fit(pts, 2)
        assert m.inertia == 0.0
        assert sorted(m.centroids[:, 0].tolist()) == [0.0, 10.0]

    def test_c_equals_n(self, rng):
        pts = rng.normal(0, 1, (7, 4))
        assert kmeans_fit(pts, 7, seed=3).inertia == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_brute_force_partition(self, seed):
        rng = np.random.default_rng(seed)
        pts = np.concatenate([rng.normal(0, 0.5, (3, 32)), rng.normal(4, 0.5, (3, 32))])
        m = kmeans_fit(pts, 2, seed=seed)
        best, labels = best_two_partition(pts)
        assert m.inertia == pytest.approx(best, rel=1e-12)
        got = np.array([m.assignments[str(i)] for i in range(6)])
        assert adjusted_rand_score(labels, got) == 1.0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(6, 30))
    def test_inertia_monotone_and_centroids_are_means(self, seed, C, n):
        rng = np.random.default_rng(seed)
        pts = rng.normal(0, 1, (n, 3)) * rng.uniform(0.1, 5, 3)
        m = kmeans_fit(pts, C, seed=seed)
        h = m.inertia_history
        assert all(b <= a + 1e-9 * max(1, a) for a, b in zip(h, h[1:]))
        labels = np.array([m.assignments[str(i)] for i in range(n)])
        assert sorted(set(labels.tolist())) == list(range(C))
        for c in range(C):
            np.testing.assert_allclose(m.centroids[c], pts[labels == c].mean(axis=0), atol=1e-12)

    def test_duplicate_points_reseed(self):
        pts = np.zeros((5, 2))
        pts[4] = 1.0
        m = kmeans_fit(pts, 3, seed=0)
        assert sorted(set(m.assignments.values())) == [0, 1, 2]

    def test_seed_reproducible(self, rng):
        pts = rng.normal(0, 1, (20, 32))
        a, b = kmeans_fit(pts, 4, seed=11), kmeans_fit(pts, 4, seed=11)
        assert dump_cluster_model(a) == dump_cluster_model(b)
        assert a.inertia_history == b.inertia_history

    def test_invalid_group_count(self, rng):
        pts = rng.normal(0, 1, (3, 2))
        for C in (0, 4):
            with pytest.raises(ValueError):
                kmeans_fit(pts, C)

    def test_planted_groups(self, rng):
        centers = rng.normal(0, 5, (4, 32))
        pts = np.repeat(centers, 2, axis=0) + rng.normal(0, 0.1, (8, 32))
        m = kmeans_fit(pts, 4, seed=0, speaker_ids=[f"s{i}" for i in range(8)])
        groups = group_assignments(m)
        assert sorted(len(g) for g in groups) == [2, 2, 2, 2]
        truth = np.repeat(np.arange(4), 2)
        assert adjusted_rand_score(truth, [m.assignments[f"s{i}"] for i in range(8)]) == 1.0

    def test_single_group(self, rng):
        pts = rng.normal(0, 1, (5, 3))
        m = kmeans_fit(pts, 1, speaker_ids=list("abcde"))
        assert group_assignments(m) == [list("abcde")]
        np.testing.assert_allclose(m.centroids[0], pts.mean(axis=0), atol=1e-14)


class TestClassify:
    def model(self, rng, C=4, D=32):
        return ClusterModel(rng.normal(0, 1, (C, D)))

    def test_exact_centroid(self, rng):
        m = self.model(rng)
        r = classify(m.centroids[2], m)
        assert r.group == 2 and r.distances[2] == 0.0
        for c in range(4):
            assert classify(m.centroids[c], m).group == c

    def test_tie_goes_low(self):
        m = ClusterModel(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        r = classify(np.array([0.0, 3.0]), m)
        assert r.group == 0
        np.testing.assert_allclose(r.posterior, [0.5, 0.5])

    def test_linear_scan_oracle(self, rng):
        m = self.model(rng)
        for _ in range(100):
            z = rng.normal(0, 1, 32)
            best, best_d = 0, np.inf
            for c in range(4):
                d = np.sqrt(sum((z[i] - m.centroids[c, i]) ** 2 for i in range(32)))
                if d < best_d:
                    best, best_d = c, d
            r = classify(z, m)
            assert r.group == best
            assert r.distances[best] == pytest.approx(best_d, rel=1e-12)
            assert r.posterior.sum() == pytest.approx(1.0)
            assert np.argmax(r.posterior) == best

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-100, 100))
    def test_translation_invariant(self, seed, shift):
        rng = np.random.default_rng(seed)
        m = self.model(rng, D=8)
        z = rng.normal(0, 1, 8)
        offset = shift * rng.normal(0, 1, 8)
        assert classify(z, m).group == classify(z + offset, ClusterModel(m.centroids + offset)).group

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            classify(np.zeros(5), self.model(rng))


class TestARI:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=2, max_size=30), st.integers(0, 2**32 - 1))
    def test_matches_reference(self, a, seed):
        b = np.random.default_rng(seed).integers(0, 4, len(a))
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)

    def test_relabeling(self):
        assert adjusted_rand_index([0, 0, 1, 1, 2, 2], [5, 5, 3, 3, 1, 1]) == 1.0


class TestSerialization:
    def test_round_trip(self, rng):
        m = kmeans_fit(rng.normal(0, 1, (10, 32)), 3, speaker_ids=[f"s{i}" for i in range(10)])
        data = dump_cluster_model(m)
        back = load_cluster_model(data)
        assert back.assignments == m.assignments
        np.testing.assert_allclose(back.centroids, m.centroids, rtol=1e-6)
        assert dump_cluster_model(back) == data
        assert back.digest() == m.digest()

    def test_corrupt(self, rng):
        data = dump_cluster_model(ClusterModel(rng.normal(0, 1, (2, 4)), {"a": 0}))
        with pytest.raises(ClusterFormatError):
            load_cluster_model(b"XXXX" + data[4:])
        with pytest.raises(ClusterFormatError):
            load_cluster_model(data[:-1])
        with pytest.raises(ClusterFormatError):
            load_cluster_model(data[:6])
