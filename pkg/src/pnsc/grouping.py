"""Speaker grouping: k-means over mean speaker embeddings and nearest-centroid classification."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from math import comb

import numpy as np

CLUSTER_MAGIC = b"PNSK"
CLUSTER_VERSION = 1


class ClusterFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ClassificationResult:
    group: int
    distances: np.ndarray
    posterior: np.ndarray


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (C, D)
    assignments: dict = field(default_factory=dict)  # speaker id -> group
    inertia: float = 0.0
    inertia_history: list = field(default_factory=list)

    @property
    def n_groups(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def classify(self, z) -> ClassificationResult:
        return classify(z, self)

    def digest(self) -> str:
        """Short content hash tying decoder banks to the clustering that produced them."""
        return hashlib.sha256(dump_cluster_model(self)).hexdigest()[:16]


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen]).min(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centroid; pick any unused index
            rest = [i for i in range(n) if i not in chosen]
            nxt = rest[int(rng.integers(len(rest)))]
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(points, points[[nxt]])[:, 0])
    return points[chosen].copy()


def kmeans_fit(embeddings, n_groups: int, seed: int = 0, speaker_ids=None, max_iter: int = 300) -> ClusterModel:
    """Lloyd's k-means with k-means++ seeding on ``(n_speakers, D)`` embeddings.

    Inertia is checked to be non-increasing at every iteration. A cluster
    that loses all members is re-seeded at the point farthest from its
    current centroid.
    """
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("embeddings must be a (speakers, dim) array")
    n = points.shape[0]
    if n_groups < 1 or n_groups > n:
        raise ValueError(f"cannot form {n_groups} groups from {n} speakers")
    if speaker_ids is None:
        speaker_ids = [str(i) for i in range(n)]
    if len(speaker_ids) != n:
        raise ValueError("speaker_ids length does not match embeddings")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(points, n_groups, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dists(points, centroids)
        new_labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), new_labels].sum())
        if history:
            assert inertia <= history[-1] + 1e-9 * max(1.0, history[-1]), "k-means inertia increased"
        history.append(inertia)
        own = d2[np.arange(n), new_labels]
        for c in range(n_groups):
            if not np.any(new_labels == c):
                # move the worst-fitting point of a multi-member cluster into the empty one
                shared = np.bincount(new_labels, minlength=n_groups)[new_labels] > 1
                far = int(np.argmax(np.where(shared, own, -1.0)))
                new_labels[far] = c
                own[far] = 0.0
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        centroids = np.stack([points[labels == c].mean(axis=0) for c in range(n_groups)])
    d2 = _sq_dists(points, centroids)
    final = float(d2[np.arange(n), labels].sum())
    assert final <= history[-1] + 1e-9 * max(1.0, history[-1]), "k-means inertia increased"
    history.append(final)
    return ClusterModel(centroids, {s: int(c) for s, c in zip(speaker_ids, labels)}, final, history)


def classify(z, model: ClusterModel) -> ClassificationResult:
    """Nearest centroid by Euclidean distance; ties go to the lowest index."""
    z = np.asarray(z, dtype=np.float64)
    if model.n_groups < 1:
        raise ValueError("cluster model has no centroids")
    if z.shape != (model.dim,):
        raise ValueError(f"embedding has shape {z.shape}, model expects ({model.dim},)")
    dist = np.sqrt(_sq_dists(z[None], model.centroids)[0])
    group = int(np.argmin(dist))  # argmin returns the first minimum
    logits = -(dist - dist.min())
    post = np.exp(logits)
    return ClassificationResult(group, dist, post / post.sum())


def group_assignments(model: ClusterModel, speakers=None) -> list[list[str]]:
    """Speaker lists per group, sorted for determinism."""
    groups = [[] for _ in range(model.n_groups)]
    ids = sorted(model.assignments) if speakers is None else list(speakers)
    for s in sorted(ids):
        groups[model.assignments[s]].append(s)
    return groups


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Agreement between two partitions, 1.0 for identical partitions up to relabeling."""
    a = np.unique(np.asarray(labels_a), return_inverse=True)[1]
    b = np.unique(np.asarray(labels_b), return_inverse=True)[1]
    if a.shape != b.shape:
        raise ValueError("label arrays differ in length")
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    index = sum(comb(int(x), 2) for x in table.ravel())
    rows = sum(comb(int(x), 2) for x in table.sum(axis=1))
    cols = sum(comb(int(x), 2) for x in table.sum(axis=0))
    total = comb(len(a), 2)
    expected = rows * cols / total if total else 0.0
    best = (rows + cols) / 2
    if best == expected:
        return 1.0
    return (index - expected) / (best - expected)


# -- serialization ----------------------------------------------------------------


def dump_cluster_model(model: ClusterModel) -> bytes:
    """Magic, version, C, D, little-endian f32 centroids, then a JSON assignment table."""
    table = json.dumps(sorted(model.assignments.items()), separators=(",", ":")).encode()
    head = struct.pack("<4sHHHI", CLUSTER_MAGIC, CLUSTER_VERSION, model.n_groups, model.dim, len(table))
    return head + model.centroids.astype("<f4").tobytes() + table


def load_cluster_model(data: bytes) -> ClusterModel:
    head = struct.calcsize("<4sHHHI")
    if len(data) < head:
        raise ClusterFormatError("cluster file truncated in header")
    magic, version, C, D, n_table = struct.unpack_from("<4sHHHI", data)
    if magic != CLUSTER_MAGIC:
        raise ClusterFormatError(f"bad cluster magic {magic!r}")
    if version != CLUSTER_VERSION:
        raise ClusterFormatError(f"unsupported cluster file version {version}")
    n_payload = 4 * C * D
    if len(data) != head + n_payload + n_table:
        raise ClusterFormatError("cluster file length does not match its header")
    centroids = np.frombuffer(data, dtype="<f4", count=C * D, offset=head).reshape(C, D).astype(np.float64)
    table = json.loads(data[head + n_payload :].decode())
    return ClusterModel(centroids, {s: int(c) for s, c in table})
