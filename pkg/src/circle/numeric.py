"""Dense linear-algebra and distance primitives.

Matrices are plain ``float64`` numpy arrays with samples in rows.
"""

import numpy as np

from .errors import ConvergenceError, DegenerateInputError, ShapeError

PCA_MAX_ITER = 1000
PCA_TOL = 1e-10
# Power iteration runs on C**(2**_SQUARINGS) so that close eigenvalues separate.
_SQUARINGS = 5
_ROW_BLOCK = 128


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _require_finite(m, what):
    if not np.all(np.isfinite(m)):
        raise DegenerateInputError(f"{what} produced non-finite entries")
    return m


def matmul(a, b):
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return _require_finite(a @ b, "matmul")


def _check_cols(a, b):
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"column mismatch: {a.shape[0]}x{a.shape[1]} vs {b.shape[0]}x{b.shape[1]}"
        )


def row_normalize(a, name="a"):
    """Return unit-norm rows; zero rows raise ``DegenerateInputError``."""
    a = as_matrix(a, name)
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateInputError(f"row {bad[0]} of {name} has zero norm", index=int(bad[0]))
    return a / norms[:, None], norms


def cosine_distance_matrix(a, b):
    """``1 - cos(a_i, b_j)`` for every row pair, clipped to [0, 2]."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    _check_cols(a, b)
    ua, _ = row_normalize(a, "a")
    ub, _ = row_normalize(b, "b")
    d = 1.0 - ua @ ub.T
    return np.clip(d, 0.0, 2.0)


def euclidean_distance_matrix(a, b):
    """Pairwise ``||a_i - b_j||``.

    Computed from explicit differences (no ``|a|^2 + |b|^2 - 2ab`` expansion), so
    identical rows give exactly zero and each entry has a fixed accumulation order.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    _check_cols(a, b)
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], _ROW_BLOCK):
        block = a[start:start + _ROW_BLOCK]
        diff = block[:, None, :] - b[None, :, :]
        out[start:start + block.shape[0]] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return _require_finite(out, "euclidean_distance_matrix")


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def _orthogonalize(v, basis):
    for u in basis:
        v = v - (u @ v) * u
    return v


def top_eigenpairs(cov, count, max_iter=PCA_MAX_ITER, tol=PCA_TOL):
    """Leading eigenpairs of a symmetric PSD matrix by power iteration with deflation.

    Returns ``(values, vectors)`` with vectors as columns, ordered by descending
    eigenvalue. Each eigenvector's sign is fixed so its largest-magnitude entry is
    positive.
    """
    cov = np.array(cov, dtype=np.float64)
    d = cov.shape[0]
    scale = max(np.trace(cov), np.finfo(float).tiny)
    work = cov.copy()
    values, vectors = [], []
    for c in range(count):
        # deterministic start, rotated per component so it is not orthogonal to the target
        v = _unit(_orthogonalize(np.cos(np.arange(d) * (c + 1.0) + 0.5) + 1.0, vectors))
        remaining = np.trace(work)
        if remaining > 1e-13 * scale:
            power = work / remaining
            for _ in range(_SQUARINGS):
                power = power @ power
            power = 0.5 * (power + power.T)
            residual = np.inf
            for _ in range(max_iter):
                w = _orthogonalize(power @ v, vectors)
                v = _unit(_orthogonalize(w / np.linalg.norm(w), vectors))
                cv = cov @ v
                residual = np.linalg.norm(cv - (v @ cv) * v) / scale
                if residual <= tol:
                    break
            else:
                raise ConvergenceError(
                    f"eigenvector {c} did not converge in {max_iter} iterations "
                    f"(relative residual {residual:.3e})",
                    residual=residual,
                )
        # else: remaining spectrum is numerically zero, any orthogonal direction works
        v = _unit(_orthogonalize(v, vectors))
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        lam = float(v @ cov @ v)
        values.append(lam)
        vectors.append(v)
        work = work - lam * np.outer(v, v)
    order = np.argsort(-np.asarray(values), kind="stable")
    return np.asarray(values)[order], np.column_stack(vectors)[:, order]


def pca_project(x, target_dim, return_components=False):
    """Project mean-centered rows onto the top ``target_dim`` principal components."""
    x = as_matrix(x, "x")
    n, d = x.shape
    if n < 2:
        raise ShapeError(f"PCA needs at least 2 rows, got {n}")
    if target_dim < 1 or target_dim > min(n, d):
        raise ShapeError(f"target_dim={target_dim} must be in [1, min({n}, {d})]")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    values, comps = top_eigenpairs(cov, target_dim)
    proj = centered @ comps
    if return_components:
        return proj, comps, values
    return proj
