"""Group speech turns by speaker: one embedding per turn, pairwise
cosine distances, complete-linkage agglomerative clustering under a
distance threshold.

Complete linkage was chosen because it is deterministic (ties broken on
the lowest index pair), standard, and simple enough to check against an
exhaustive oracle.  Lowering the threshold only ever splits clusters, so
the threshold is a clean pipeline hyperparameter.
"""

from __future__ import annotations

import numpy as np

from .core import Timeline
from .features import MfccConfig, Waveform
from .embedding import chunk_features, embed
from .nnet import SequenceModel


def cosine_distance_matrix(embeddings: np.ndarray) -> np.ndarray:
    """Symmetric [n x n] matrix of 1 - <a, b> with an exactly zero diagonal."""
    sim = embeddings @ embeddings.T
    dist = 1.0 - sim
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return np.clip(dist, 0.0, 2.0)


def turn_embeddings(model: SequenceModel, waveform: Waveform,
                    turns: Timeline,
                    config: MfccConfig = MfccConfig()) -> np.ndarray:
    """One unit-norm embedding per turn.

    Turns no longer than the training chunk are embedded directly
    (shorter ones are reflection-padded); longer turns are cut into
    chunk-sized pieces whose embeddings are averaged and renormalized.
    """
    duration = float(model.meta.get("chunk_duration", 0.5))
    out = []
    for turn in turns:
        if turn.duration <= duration:
            starts = [turn.start]
        else:
            starts = list(np.arange(turn.start, turn.end - duration,
                                    duration))
            starts.append(turn.end - duration)
        batch = np.stack([
            chunk_features(waveform, s, duration, config) for s in starts
        ])
        vectors = model.forward(batch)
        mean = vectors.mean(axis=0)
        norm = np.linalg.norm(mean)
        out.append(mean / norm if norm > 0 else mean)
    return np.array(out).reshape(len(turns), -1)


def agglomerate(distances: np.ndarray, threshold: float) -> np.ndarray:
    """Complete-linkage cluster index per item.

    Merge the pair of clusters with the smallest complete-linkage
    (maximum pairwise) distance while that distance is strictly below the
    threshold; ties pick the lowest (i, j) pair.  Output labels are
    0..k-1 in order of each cluster's smallest item index.
    """
    distances = np.asarray(distances, dtype=np.float64)
    n = distances.shape[0]
    if distances.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if not np.allclose(distances, distances.T, atol=1e-9):
        raise ValueError("distance matrix must be symmetric")
    clusters: list[list[int]] = [[i] for i in range(n)]
    link = distances.copy()
    while len(clusters) > 1:
        best = (np.inf, -1, -1)
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = link[i, j]
                if d < best[0]:
                    best = (d, i, j)
        d, i, j = best
        if d >= threshold:
            break
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
        # complete linkage: distance to the merged cluster is the max
        merged = np.maximum(link[i], link[j])
        link[i, :] = merged
        link[:, i] = merged
        link[i, i] = 0.0
        keep = [k for k in range(link.shape[0]) if k != j]
        link = link[np.ix_(keep, keep)]
    labels = np.zeros(n, dtype=np.int64)
    order = sorted(range(len(clusters)), key=lambda k: min(clusters[k]))
    for new_id, k in enumerate(order):
        for item in clusters[k]:
            labels[item] = new_id
    return labels
