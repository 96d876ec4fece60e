"""Reconstruction and cross-view graph contrastive objectives with exact gradients.

Shapes used throughout, for a batch of M samples, V views, K neighbors:

* ``x[v]``, ``xhat[v]``: (M, d_v)
* ``z``: (V, M, dz), the representations of the batch rows
* ``nbr``: (V, M, V, K, dz); ``nbr[v, m, i, k]`` is the view-i representation of
  the k-th cross-view-graph neighbor of batch slot m anchored in view v.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, PreconditionError, ShapeError


@dataclass
class BatchBundle:
    x: list
    z: np.ndarray
    xhat: list
    nbr: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.nbr = np.asarray(self.nbr, dtype=np.float64)
        if self.z.ndim != 3:
            raise ShapeError(f"z must be (V, M, dz), got {self.z.shape}")
        v, m, dz = self.z.shape
        if self.nbr.ndim != 5 or self.nbr.shape[:3] != (v, m, v) or self.nbr.shape[4] != dz:
            raise ShapeError(f"nbr must be ({v}, {m}, {v}, K, {dz}), got {self.nbr.shape}")
        if len(self.x) != v or len(self.xhat) != v:
            raise ShapeError(f"need {v} input and reconstruction blocks")
        for i, (a, b) in enumerate(zip(self.x, self.xhat)):
            if np.shape(a) != np.shape(b) or np.shape(a)[0] != m:
                raise ShapeError(
                    f"view {i + 1}: input {np.shape(a)} and reconstruction {np.shape(b)} disagree"
                )

    @property
    def n_views(self):
        return self.z.shape[0]

    @property
    def batch_size(self):
        return self.z.shape[1]

    @property
    def k(self):
        return self.nbr.shape[3]


def weight_profile(k):
    """Neighbor weights ``(1/k) / sum_j (1/j)`` for ranks 1..K."""
    if k < 1:
        raise PreconditionError(f"K must be >= 1, got {k}")
    inv = 1.0 / np.arange(1, k + 1, dtype=np.float64)
    return inv / inv.sum()


def uniform_profile(k):
    return np.full(k, 1.0 / k)


def reconstruction_loss(bundle):
    """Squared error summed over features, averaged over the M*V (sample, view) pairs."""
    scale = 1.0 / (bundle.batch_size * bundle.n_views)
    value = 0.0
    grads = []
    for x, xhat in zip(bundle.x, bundle.xhat):
        diff = np.asarray(xhat, dtype=np.float64) - np.asarray(x, dtype=np.float64)
        value += float(np.sum(diff * diff))
        grads.append(2.0 * scale * diff)
    return value * scale, grads


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _normalize(z, label):
    norms = np.linalg.norm(z, axis=-1)
    if np.any(norms == 0):
        bad = tuple(int(i) for i in np.argwhere(norms == 0)[0])
        raise DegenerateInputError(f"zero-norm {label} representation at {bad}", index=bad)
    return z / norms[..., None], norms


def _radial_free(g_u, u, norms):
    """Map a gradient w.r.t. unit vectors back to the unnormalised vectors."""
    g_u = g_u - np.sum(g_u * u, axis=-1, keepdims=True) * u
    return g_u / norms[..., None]


def contrastive_loss(bundle, weights, temperature=1.0):
    """Weighted cross-view graph contrastive loss and its gradients.

    For anchor (v, n) and each target view i and neighbor rank k the term is
    ``-log(exp(s_pos) / sum_m [exp(s(z_n, z_m)) + exp(s(z_n, nbr[v, m, i, k]))])``
    with ``s`` the cosine similarity divided by ``temperature``. The anchor loss is
    ``(1/V) * sum_{i,k} w_k * term`` and the returned value is the mean over all
    V*M anchors.

    Returns ``(value, grad_z, grad_nbr)`` shaped like ``bundle.z`` and ``bundle.nbr``.
    """
    z, nbr = bundle.z, bundle.nbr
    n_views, m, _ = z.shape
    k = nbr.shape[3]
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ShapeError(f"weight profile has {w.size} entries for K={k}")
    u, z_norms = _normalize(z, "batch")
    nb, nb_norms = _normalize(nbr, "neighbor")
    inv_t = 1.0 / temperature
    shift = inv_t  # similarities never exceed 1, so this bounds every exponent by 0
    coef = np.broadcast_to(w / (n_views * m * n_views), (m, n_views, k))

    value = 0.0
    g_u = np.zeros_like(u)
    g_nb = np.zeros_like(nb)
    rows = np.arange(m)
    for v in range(n_views):
        uv = u[v]
        nbv = nb[v].reshape(-1, nb.shape[-1])  # (m*i*k, d)
        s_self = (uv @ uv.T) * inv_t  # (n, m)
        s_nbr = (uv @ nbv.T).reshape(m, m, n_views, k) * inv_t  # (n, m, i, k)
        e_self = np.exp(s_self - shift)
        e_nbr = np.exp(s_nbr - shift)
        denom = e_self.sum(axis=1)[:, None, None] + e_nbr.sum(axis=1)  # (n, i, k)
        positive = s_nbr[rows, rows]  # (n, i, k)
        term = np.log(denom) + shift - positive
        value += float(np.sum(coef * term))

        p = coef / denom
        g_self = p.sum(axis=(1, 2))[:, None] * e_self * inv_t
        g_nbr = p[:, None] * e_nbr
        g_nbr[rows, rows] -= coef
        g_nbr *= inv_t
        g_flat = g_nbr.reshape(m, -1)
        g_u[v] += (g_self + g_self.T) @ uv + g_flat @ nbv
        g_nb[v] += (g_flat.T @ uv).reshape(nb.shape[1:])

    return value, _radial_free(g_u, u, z_norms), _radial_free(g_nb, nb, nb_norms)


@dataclass
class LossResult:
    total: float
    reconstruction: float
    contrastive: float
    grad_xhat: list
    grad_z: np.ndarray
    grad_nbr: np.ndarray


def total_loss(bundle, lam, weights, temperature=1.0, reconstruction=True):
    """Reconstruction plus ``lam`` times the contrastive term.

    With ``reconstruction=False`` the reconstruction value is still reported but
    contributes neither to the total nor to the gradients.
    """
    if lam < 0:
        raise PreconditionError(f"lambda must be >= 0, got {lam}")
    rec, g_xhat = reconstruction_loss(bundle)
    cgc, g_z, g_nbr = contrastive_loss(bundle, weights, temperature)
    if reconstruction:
        total = rec + lam * cgc
    else:
        total = lam * cgc
        g_xhat = [np.zeros_like(g) for g in g_xhat]
    return LossResult(total, rec, cgc, g_xhat, lam * g_z, lam * g_nbr)
