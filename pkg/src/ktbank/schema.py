"""Schema discovery: manifold reduction, density clustering, c-TF-IDF
keyword labeling, and nearest-centroid assignment with a generic-pool
fallback for cold starts.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from math import log
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .denoise import EmbeddingProvider, denoise, embed_sequence, serialize_sequence
from .errors import TooFewPoints
from .types import GENERIC, EmbeddingVector, SchemaModel, Split, StudentSequence

DEFAULT_TARGET_DIM = 32
DEFAULT_CLUSTER_PARAMS = {"eps": 0.4, "min_pts": 5}
TOP_KEYWORDS = 10
MIN_LEN_FOR_ROUTING = 5


# ---------------------------------------------------------------------------
# Reducers

class Reducer(ABC):
    """Projects embeddings to a lower-dimensional space; params must be
    enough to project new vectors into the same space later."""

    @abstractmethod
    def fit_transform(self, matrix: np.ndarray, target_dim: int, seed: int
                      ) -> tuple[np.ndarray, dict[str, Any]]: ...

    @staticmethod
    def transform(matrix: np.ndarray, params: Mapping[str, Any]) -> np.ndarray:
        kind = params["kind"]
        if kind == "identity":
            return np.asarray(matrix, dtype=np.float64)
        if kind == "gaussian":
            proj = _projection_matrix(params)
            reduced = np.asarray(matrix, dtype=np.float64) @ proj
            return _renormalize_rows(reduced)
        raise ValueError(f"unknown reducer kind: {kind!r}")


def _renormalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def _projection_matrix(params: Mapping[str, Any]) -> np.ndarray:
    rng = np.random.default_rng(int(params["seed"]))
    d, t = int(params["input_dim"]), int(params["target_dim"])
    return rng.standard_normal((d, t)) / np.sqrt(t)


class IdentityReducer(Reducer):
    def fit_transform(self, matrix, target_dim, seed):
        matrix = np.asarray(matrix, dtype=np.float64)
        if target_dim != matrix.shape[1]:
            raise ValueError("identity reducer requires target_dim == input dimension")
        return matrix, {"kind": "identity", "input_dim": matrix.shape[1],
                        "target_dim": target_dim}


class RandomProjectionReducer(Reducer):
    """Seeded Gaussian projection followed by row re-normalization.

    Angle-preserving in expectation, deterministic given the seed, and
    reconstructible from params alone (the matrix is regenerated from the
    seed rather than stored).
    """

    def fit_transform(self, matrix, target_dim, seed):
        matrix = np.asarray(matrix, dtype=np.float64)
        params = {
            "kind": "gaussian",
            "seed": int(seed),
            "input_dim": int(matrix.shape[1]),
            "target_dim": int(target_dim),
        }
        return Reducer.transform(matrix, params), params


def reduce_vectors(
    vectors: Sequence[EmbeddingVector] | np.ndarray,
    target_dim: int,
    seed: int = 0,
    reducer: Reducer | None = None,
) -> tuple[np.ndarray, dict[str, Any]]:
    """Reduce a batch of embeddings; returns (rows, reducer_params)."""
    if isinstance(vectors, np.ndarray):
        matrix = vectors.astype(np.float64)
    else:
        matrix = np.stack([v.values for v in vectors]).astype(np.float64)
    if matrix.shape[0] < 2:
        raise TooFewPoints("need at least 2 vectors to fit a reducer")
    input_dim = matrix.shape[1]
    if not 1 <= target_dim <= input_dim:
        raise ValueError(f"target_dim must lie in [1, {input_dim}]")
    if reducer is None:
        reducer = IdentityReducer() if target_dim == input_dim else RandomProjectionReducer()
    return reducer.fit_transform(matrix, target_dim, seed)


# ---------------------------------------------------------------------------
# Density clustering

def cluster(points: np.ndarray, params: Mapping[str, Any] | None = None) -> list[int]:
    """DBSCAN labels over euclidean distance; -1 marks noise.

    Deterministic: clusters are numbered by the order their first core
    point appears; border points join the first cluster that reaches them.
    """
    p = dict(DEFAULT_CLUSTER_PARAMS)
    if params:
        p.update(params)
    eps, min_pts = float(p["eps"]), int(p["min_pts"])
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < min_pts:
        raise TooFewPoints(f"need at least min_pts={min_pts} points, got {n}")

    diffs = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diffs * diffs, axis=2))
    neighbors = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = [len(nb) >= min_pts for nb in neighbors]

    labels = [-1] * n
    visited = [False] * n
    next_label = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        labels[i] = next_label
        visited[i] = True
        queue = list(neighbors[i])
        qi = 0
        while qi < len(queue):
            j = queue[qi]
            qi += 1
            if labels[j] == -1:
                labels[j] = next_label
            if visited[j]:
                continue
            visited[j] = True
            if core[j]:
                queue.extend(int(x) for x in neighbors[j])
        next_label += 1
    return labels


# ---------------------------------------------------------------------------
# c-TF-IDF

@dataclass(frozen=True)
class CtfidfTable:
    """Per-cluster word weights W(w,k) = tf(w,k) * ln(1 + A / f_w)."""

    weights: Mapping[int, Mapping[str, float]]
    avg_words_per_cluster: float
    global_word_freq: Mapping[str, int]

    def top_keywords(self, cluster_id: int, n: int = TOP_KEYWORDS) -> tuple[tuple[str, float], ...]:
        table = self.weights.get(cluster_id, {})
        ranked = sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))
        return tuple(ranked[:n])


def ctfidf(cluster_docs: Mapping[int, Sequence[Sequence[str]]]) -> CtfidfTable:
    """Class-based TF-IDF over concatenated per-cluster documents.

    tf counts a word inside one cluster, A is the mean token count per
    cluster, and f_w is the word's total count across all clusters.
    """
    if not cluster_docs:
        raise ValueError("need at least one cluster")
    cluster_tf: dict[int, Counter] = {}
    total_tokens = 0
    global_freq: Counter = Counter()
    for cid, docs in cluster_docs.items():
        tf = Counter()
        for doc in docs:
            tf.update(doc)
        cluster_tf[cid] = tf
        total_tokens += sum(tf.values())
        global_freq.update(tf)
    if total_tokens == 0:
        raise ValueError("need at least one token across the clusters")
    avg = total_tokens / len(cluster_docs)
    weights = {
        cid: {w: tf_w * log(1.0 + avg / global_freq[w]) for w, tf_w in tf.items()}
        for cid, tf in cluster_tf.items()
    }
    return CtfidfTable(weights=weights, avg_words_per_cluster=avg,
                       global_word_freq=dict(global_freq))


# ---------------------------------------------------------------------------
# Fit and assign

@dataclass(frozen=True)
class ClusterAssignment:
    student_id: str
    cluster_id: int
    distance_to_centroid: float

    def __post_init__(self):
        if self.distance_to_centroid < 0:
            raise ValueError("distance must be >= 0")


def _generic_only_model(provider: EmbeddingProvider, seed: int,
                        cluster_params: Mapping[str, Any]) -> SchemaModel:
    return SchemaModel(
        centroids=(),
        reducer_params={"kind": "identity", "input_dim": provider.dimension,
                        "target_dim": provider.dimension},
        cluster_keywords={},
        cluster_params=dict(cluster_params),
        seed=seed,
        provider_name=provider.name,
        dimension=provider.dimension,
    )


def fit_schema(
    train_sequences: Sequence[StudentSequence],
    provider: EmbeddingProvider,
    reducer: Reducer | None = None,
    cluster_params: Mapping[str, Any] | None = None,
    seed: int = 0,
    target_dim: int = DEFAULT_TARGET_DIM,
) -> SchemaModel:
    """Embed, reduce, cluster, and label the training population.

    Noise points (and everything, when no dense region exists) fall into
    the generic pool; the returned model then has zero centroids.
    """
    for seq in train_sequences:
        if seq.split is not Split.TRAIN:
            raise ValueError(f"fit_schema requires train sequences; got {seq.student_id}")
    params = dict(DEFAULT_CLUSTER_PARAMS)
    if cluster_params:
        params.update(cluster_params)

    if len(train_sequences) < 2 or len(train_sequences) < int(params["min_pts"]):
        return _generic_only_model(provider, seed, params)

    embeddings = [embed_sequence(seq, provider) for seq in train_sequences]
    target = min(target_dim, provider.dimension)
    reduced, reducer_params = reduce_vectors(embeddings, target, seed=seed, reducer=reducer)
    labels = cluster(reduced, params)

    n_clusters = max(labels) + 1 if any(l >= 0 for l in labels) else 0
    if n_clusters == 0:
        return SchemaModel(
            centroids=(),
            reducer_params=reducer_params,
            cluster_keywords={},
            cluster_params=dict(params),
            seed=seed,
            provider_name=provider.name,
            dimension=provider.dimension,
        )

    centroids = []
    for k in range(n_clusters):
        members = [i for i, l in enumerate(labels) if l == k]
        mean = reduced[members].mean(axis=0)
        centroids.append(EmbeddingVector.normalized(mean))

    docs: dict[int, list[list[str]]] = {k: [] for k in range(n_clusters)}
    for seq, label in zip(train_sequences, labels):
        if label >= 0:
            docs[label].append(denoise(serialize_sequence(seq)))
    table = ctfidf(docs)
    keywords = {k: table.top_keywords(k) for k in range(n_clusters)}

    return SchemaModel(
        centroids=tuple(centroids),
        reducer_params=reducer_params,
        cluster_keywords=keywords,
        cluster_params=dict(params),
        seed=seed,
        provider_name=provider.name,
        dimension=provider.dimension,
    )


def reduce_embedding(vec: EmbeddingVector, model: SchemaModel) -> np.ndarray:
    """Project one embedding into the model's reduced space (unit row)."""
    row = Reducer.transform(vec.values[None, :], model.reducer_params)[0]
    norm = np.linalg.norm(row)
    return row / norm if norm > 0 else row


def nearest_centroid(reduced: np.ndarray, model: SchemaModel) -> tuple[int, float]:
    """Cosine-distance argmin over centroids; ties go to the lowest index."""
    sims = np.array([float(np.dot(reduced, c.values)) for c in model.centroids])
    distances = 1.0 - sims
    best = int(np.argmin(distances))
    return best, float(max(distances[best], 0.0))


def assign(
    seq: StudentSequence,
    model: SchemaModel,
    provider: EmbeddingProvider,
    min_len_for_routing: int = MIN_LEN_FOR_ROUTING,
) -> ClusterAssignment:
    """Route a sequence to its nearest schema, or to the generic pool when
    the history is too short for a reliable assignment (cold start) or no
    clusters exist."""
    if model.n_clusters == 0 or len(seq) < min_len_for_routing:
        return ClusterAssignment(seq.student_id, GENERIC, 0.0)
    reduced = reduce_embedding(embed_sequence(seq, provider), model)
    best, distance = nearest_centroid(reduced, model)
    return ClusterAssignment(seq.student_id, best, distance)


# ---------------------------------------------------------------------------
# Persistence

def save_schema(model: SchemaModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def load_schema(path: str | Path) -> SchemaModel:
    return SchemaModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
