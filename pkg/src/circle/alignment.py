"""Cross-view realignment from learned representations, and the PCA + Hungarian baseline."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autoencoder as ae_mod
from .errors import ConsistencyError, PreconditionError, ShapeError
from .numeric import as_matrix, euclidean_distance_matrix, pca_project

MODES = ("bijective", "greedy")


def hungarian(cost):
    """Minimum-cost perfect assignment for a square cost matrix.

    Shortest-augmenting-path Hungarian method with row/column potentials,
    O(n^3). Returns ``cols`` with row ``r`` assigned to column ``cols[r]``.
    """
    cost = as_matrix(cost, "cost")
    n, n_cols = cost.shape
    if n != n_cols:
        raise ShapeError(f"cost matrix must be square, got {n}x{n_cols}")
    if not np.all(np.isfinite(cost)):
        raise ShapeError("cost matrix has non-finite entries")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    # 1-based columns; column 0 is a sentinel that holds the row being inserted
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used
            free[0] = False
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free[1:], minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[row_of[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1
    cols = np.empty(n, dtype=np.int64)
    cols[row_of[1:] - 1] = np.arange(n)
    return cols


def assignment_cost(cost, cols):
    cost = np.asarray(cost)
    return float(cost[np.arange(len(cols)), cols].sum())


@dataclass(frozen=True)
class AlignmentResult:
    """``mapping[v, n]``: row of view v matched to view-1 row n (``mapping[0]`` is identity)."""

    mapping: np.ndarray  # (V, N) int
    mode: str
    keep_known: bool
    pair_distance: np.ndarray  # (V, N) distance of each matched pair

    @property
    def n_views(self):
        return self.mapping.shape[0]


def align_representations(reps, aligned_mask, mode="bijective", keep_known=True):
    """Match every view-1 row to a row of each other view by Euclidean distance."""
    if mode not in MODES:
        raise PreconditionError(f"mode must be one of {MODES}, got {mode!r}")
    n = reps[0].shape[0]
    mask = np.asarray(aligned_mask)
    rows = np.flatnonzero(mask == 0) if keep_known else np.arange(n)
    mapping = np.tile(np.arange(n), (len(reps), 1))
    pair = np.zeros((len(reps), n))
    for v in range(1, len(reps)):
        if rows.size == 0:
            continue
        dist = euclidean_distance_matrix(reps[0][rows], reps[v][rows])
        if mode == "greedy":
            cols = np.argmin(dist, axis=1)
        else:
            cols = hungarian(dist)
        mapping[v, rows] = rows[cols]
        pair[v, rows] = dist[np.arange(rows.size), cols]
    return AlignmentResult(mapping, mode, keep_known, pair)


def encode_all(model, dataset):
    """Full-dataset representations, one (N, dz) matrix per view."""
    ae_mod.check_compatible(model, dataset)
    return [ae_mod.encode(model, v, x)[0] for v, x in enumerate(dataset.views)]


def infer_alignment(model, dataset, mode="bijective", keep_known=True, reps=None):
    if reps is None:
        reps = encode_all(model, dataset)
    return align_representations(reps, dataset.aligned_mask, mode, keep_known)


def concatenate_representations(reps, alignment):
    n = reps[0].shape[0]
    if alignment.mapping.shape != (len(reps), n):
        raise ConsistencyError(
            f"alignment covers {alignment.mapping.shape}, representations are {len(reps)} x {n}"
        )
    if alignment.mapping.min() < 0 or alignment.mapping.max() >= n:
        raise ConsistencyError("alignment index out of range")
    return np.hstack([r[alignment.mapping[v]] for v, r in enumerate(reps)])


def concatenate(model, dataset, alignment, reps=None):
    """Row n is ``[z1_n | z2_{a2(n)} | ... ]`` under ``alignment``."""
    if reps is None:
        reps = encode_all(model, dataset)
    return concatenate_representations(reps, alignment)


def pca_views(dataset, target_dim):
    if target_dim > min(dataset.dims):
        raise ShapeError(f"target_dim={target_dim} exceeds smallest view width {min(dataset.dims)}")
    return [pca_project(x, target_dim) for x in dataset.views]


def baseline_realign(dataset, target_dim, keep_known=False, projections=None):
    """PCA every view to ``target_dim`` and match views by Hungarian on Euclidean cost."""
    if projections is None:
        projections = pca_views(dataset, target_dim)
    return align_representations(projections, dataset.aligned_mask, "bijective", keep_known)


def instance_alignment_rate(result, dataset):
    """Fraction of unaligned (view-1 row, view v) pairs matched to the true instance.

    Pooled over views v >= 2; defined as 1 when nothing is unaligned.
    """
    rows = dataset.unaligned_indices
    if rows.size == 0 or dataset.n_views < 2:
        return 1.0
    hits = [dataset.true_correspondence[v][result.mapping[v, rows]] == rows
            for v in range(1, dataset.n_views)]
    return float(np.mean(np.concatenate(hits)))


def cluster_alignment_rate(result, dataset):
    if dataset.labels is None:
        raise PreconditionError("cluster-level alignment rate needs labels")
    rows = dataset.unaligned_indices
    if rows.size == 0 or dataset.n_views < 2:
        return 1.0
    labels = dataset.labels
    hits = [labels[dataset.true_correspondence[v][result.mapping[v, rows]]] == labels[rows]
            for v in range(1, dataset.n_views)]
    return float(np.mean(np.concatenate(hits)))


def alignment_rates(result, dataset):
    """``(instance_rate, cluster_rate)`` over the unaligned rows."""
    return instance_alignment_rate(result, dataset), cluster_alignment_rate(result, dataset)


def save_alignment_csv(result, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for v in range(1, result.n_views):
        p = directory / f"alignment_{v + 1}.csv"
        p.write_text("".join(f"{int(j)}\n" for j in result.mapping[v]))
        paths.append(p)
    return paths
