"""Aligned-KNN relation graphs and their cross-view fusion."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConsistencyError
from .numeric import cosine_distance_matrix

_ROW_BLOCK = 512


@dataclass(frozen=True)
class RelationGraph:
    """``neighbors[v, n]`` are the K nearest aligned rows of sample n in view v.

    Rows are ordered by (cosine distance, index); ``distances`` holds the
    matching distances.
    """

    neighbors: np.ndarray  # (V, N, K) int
    distances: np.ndarray  # (V, N, K) float

    @property
    def k(self):
        return self.neighbors.shape[2]


@dataclass(frozen=True)
class CrossViewGraph:
    """``refs[v, n, i, k]``: row of view ``i`` holding the k-th neighbor of (v, n)."""

    refs: np.ndarray  # (V, N, V, K) int

    @property
    def k(self):
        return self.refs.shape[3]

    @property
    def n_views(self):
        return self.refs.shape[0]


def knn_aligned(view, aligned_idx, k):
    """K nearest aligned rows (cosine distance) of every row of ``view``, self excluded."""
    n = view.shape[0]
    candidates = view[aligned_idx]
    neighbors = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    for start in range(0, n, _ROW_BLOCK):
        stop = min(start + _ROW_BLOCK, n)
        dist = cosine_distance_matrix(view[start:stop], candidates)
        rows = np.arange(start, stop)
        # aligned_idx is ascending, so a stable sort breaks ties by lower index
        self_hit = aligned_idx[None, :] == rows[:, None]
        dist[self_hit] = np.inf
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        neighbors[start:stop] = aligned_idx[order]
        distances[start:stop] = np.take_along_axis(dist, order, axis=1)
    return neighbors, distances


def build_relation_graphs(d, k) -> RelationGraph:
    """Per-view K nearest aligned neighbors of every sample, on raw features."""
    if k < 1:
        raise CapacityError(f"k must be >= 1, got {k}")
    aligned = d.aligned_indices
    if aligned.size < k + 1:
        raise CapacityError(
            f"need at least k+1={k + 1} aligned samples, dataset has {aligned.size}"
        )
    nbrs, dists = zip(*(knn_aligned(view, aligned, k) for view in d.views))
    return RelationGraph(neighbors=np.stack(nbrs), distances=np.stack(dists))


def fuse_cross_view(g: RelationGraph, d) -> CrossViewGraph:
    """Replicate each neighbor list into every view.

    Neighbors are aligned rows, and an aligned instance occupies the same row
    position in every view, so the reference into view ``i`` is the row index itself.
    """
    if np.any(d.aligned_mask[g.neighbors] != 1):
        bad = np.argwhere(d.aligned_mask[g.neighbors] != 1)[0]
        raise ConsistencyError(f"unaligned neighbor at (view, sample, k) = {tuple(bad)}")
    v = g.neighbors.shape[0]
    refs = np.repeat(g.neighbors[:, :, None, :], v, axis=2)
    return CrossViewGraph(refs=refs)


def save_graph_csv(g: RelationGraph, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for v, nb in enumerate(g.neighbors, start=1):
        p = directory / f"graph_{v}.csv"
        np.savetxt(p, nb, fmt="%d", delimiter=",")
        paths.append(p)
    return paths
