"""Clustering and classification scoring of learned representations."""

from dataclasses import dataclass, field

import numpy as np

from .alignment import (
    alignment_rates,
    concatenate_representations,
    encode_all,
    hungarian,
    infer_alignment,
)
from .dataset import split_indices
from .errors import PreconditionError, ShapeError
from .numeric import as_matrix

CLASSIFIER_NOTE = (
    "classification uses a linear one-vs-rest hinge-loss classifier trained by "
    "stochastic subgradient descent with L2 regularisation (no kernel)"
)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    history: list = field(default_factory=list)


def _sq_dists(x, centers):
    d = (x * x).sum(1)[:, None] + (centers * centers).sum(1)[None, :] - 2.0 * x @ centers.T
    return np.maximum(d, 0.0)


def _inertia(x, centers, labels):
    diff = x - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _kmeanspp_seed(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1]).ravel()
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[c] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[c:c + 1]).ravel())
    return centers


def _lloyd(x, centers, max_iter, tol):
    history = []
    labels = np.argmin(_sq_dists(x, centers), axis=1)
    history.append(_inertia(x, centers, labels))
    for it in range(1, max_iter + 1):
        new = centers.copy()
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        shift = np.sqrt(((new - centers) ** 2).sum(1)).max()
        centers = new
        labels = np.argmin(_sq_dists(x, centers), axis=1)
        history.append(_inertia(x, centers, labels))
        if shift < tol:
            break
    return labels, centers, it, history


def kmeans(x, k, seed=0, restarts=10, max_iter=300, tol=1e-8):
    """k-means++ seeding plus Lloyd iterations; keeps the lowest-inertia restart."""
    x = as_matrix(x, "x")
    if not 1 <= k <= x.shape[0]:
        raise PreconditionError(f"k={k} must be between 1 and the number of rows ({x.shape[0]})")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels, centers, n_iter, history = _lloyd(x, _kmeanspp_seed(x, k, rng), max_iter, tol)
        inertia = _inertia(x, centers, labels)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centers, inertia, n_iter, history)
    return best


def kmeans_pp(x, k, seed=0, restarts=10):
    return kmeans(x, k, seed, restarts).labels


def _check_pair(pred, true):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ShapeError(f"label arrays differ in shape: {pred.shape} vs {true.shape}")
    return pred, true


def contingency(pred, true):
    pred, true = _check_pair(pred, true)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(true, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def cluster_acc(pred, true):
    """Best matched fraction over one-to-one cluster/class pairings."""
    pred, true = _check_pair(pred, true)
    if pred.size == 0:
        raise ShapeError("empty label arrays")
    table = contingency(pred, true)
    size = max(table.shape)
    square = np.zeros((size, size))
    square[: table.shape[0], : table.shape[1]] = table
    cols = hungarian(-square)
    return float(square[np.arange(size), cols].sum() / pred.size)


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, true):
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    table = contingency(pred, true).astype(np.float64)
    n = table.sum()
    hp = _entropy(table.sum(1))
    ht = _entropy(table.sum(0))
    if hp == 0.0 and ht == 0.0:
        return 1.0
    outer = np.outer(table.sum(1), table.sum(0))
    nz = table > 0
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return float(np.clip(mi / ((hp + ht) / 2.0), 0.0, 1.0))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(pred, true):
    table = contingency(pred, true)
    n = table.sum()
    index = _comb2(table).sum()
    a = _comb2(table.sum(1)).sum()
    b = _comb2(table.sum(0)).sum()
    expected = a * b / _comb2(n) if n > 1 else 0.0
    max_index = (a + b) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def linear_classifier(train_x, train_y, test_x, test_y, seed=0, epochs=60, reg=1e-4,
                      lr=0.1, batch_size=32):
    """Test accuracy of a one-vs-rest linear hinge-loss classifier.

    Features are standardised with training statistics; weights are fit by
    mini-batch subgradient descent on ``reg/2 |W|^2 + mean hinge``.
    """
    train_x = as_matrix(train_x, "train_x")
    test_x = as_matrix(test_x, "test_x")
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    classes = np.unique(train_y)
    if classes.size < 2:
        raise PreconditionError("training set needs at least two classes")
    mean = train_x.mean(0)
    std = train_x.std(0)
    std[std == 0] = 1.0
    xs = (train_x - mean) / std
    target = np.where(train_y[:, None] == classes[None, :], 1.0, -1.0)
    rng = np.random.default_rng(seed)
    w = np.zeros((xs.shape[1], classes.size))
    b = np.zeros(classes.size)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(xs.shape[0])
        for s in range(0, xs.shape[0], batch_size):
            idx = order[s:s + batch_size]
            xb, yb = xs[idx], target[idx]
            active = (yb * (xb @ w + b) < 1.0) * yb
            eta = lr / (1.0 + lr * reg * step)
            w -= eta * (reg * w - xb.T @ active / idx.size)
            b += eta * active.mean(0)
            step += 1
    scores = ((test_x - mean) / std) @ w + b
    pred = classes[np.argmax(scores, axis=1)]
    return float(np.mean(pred == test_y))


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "bijective"
    keep_known: bool = True
    seeds: tuple = (0, 1, 2, 3, 4)
    train_fractions: tuple = (0.8, 0.5, 0.2)
    restarts: int = 10


@dataclass
class EvalReport:
    acc: float
    nmi: float
    ari: float
    classification: dict
    instance_rate: float
    cluster_rate: float
    seeds: tuple

    def to_dict(self):
        return {
            "clustering": {"acc": self.acc, "nmi": self.nmi, "ari": self.ari},
            "classification": {f"p{round(f * 100)}": a for f, a in self.classification.items()},
            "alignment": {"instance": self.instance_rate, "cluster": self.cluster_rate},
            "seeds": list(self.seeds),
            "classifier": CLASSIFIER_NOTE,
        }


def clustering_scores(z, labels, seeds=(0, 1, 2, 3, 4), restarts=10):
    """Mean (ACC, NMI, ARI) of k-means over ``seeds`` with k = number of classes."""
    k = int(np.unique(labels).size)
    scores = []
    for s in seeds:
        pred = kmeans_pp(z, k, seed=s, restarts=restarts)
        scores.append((cluster_acc(pred, labels), nmi(pred, labels), ari(pred, labels)))
    return tuple(float(v) for v in np.mean(scores, axis=0))


def classification_scores(z, labels, fractions=(0.8, 0.5, 0.2), seeds=(0, 1, 2, 3, 4)):
    out = {}
    for f in fractions:
        accs = []
        for s in seeds:
            tr, te = split_indices(len(labels), f, seed=s)
            accs.append(linear_classifier(z[tr], labels[tr], z[te], labels[te], seed=s))
        out[f] = float(np.mean(accs))
    return out


def evaluate_representation(z, dataset, alignment, config=EvalConfig()):
    if dataset.labels is None:
        raise PreconditionError("evaluation needs labels")
    labels = dataset.labels
    acc, nmi_v, ari_v = clustering_scores(z, labels, config.seeds, config.restarts)
    cls = classification_scores(z, labels, config.train_fractions, config.seeds)
    instance, cluster = alignment_rates(alignment, dataset)
    return EvalReport(acc, nmi_v, ari_v, cls, instance, cluster, tuple(config.seeds))


def evaluate(model, dataset, config=EvalConfig()):
    """Realign, concatenate and score a trained model on ``dataset``."""
    reps = encode_all(model, dataset)
    alignment = infer_alignment(model, dataset, config.mode, config.keep_known, reps=reps)
    z = concatenate_representations(reps, alignment)
    return evaluate_representation(z, dataset, alignment, config)
