"""Multi-view data model, file I/O, synthetic generation and misalignment."""

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, GenerationError, PreconditionError

MVW_MAGIC = b"MVW1"
_VIEW_RE = re.compile(r"^view_(\d+)\.(csv|mvw)$")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultiViewDataset:
    """Per-view feature matrices (samples in rows) with alignment bookkeeping.

    ``true_correspondence[v][r]`` is the view-1 row holding the same instance as
    row ``r`` of view ``v``. It is ground truth for scoring only; training code
    must not read it.
    """

    views: tuple
    labels: np.ndarray | None = None
    aligned_mask: np.ndarray | None = None
    true_correspondence: tuple | None = None

    def __post_init__(self):
        views = tuple(_frozen(v, np.float64) for v in self.views)
        if not views:
            raise DatasetFormatError("dataset needs at least one view")
        n = views[0].shape[0]
        for i, v in enumerate(views):
            if v.ndim != 2:
                raise DatasetFormatError(f"view {i + 1} must be 2-D, got shape {v.shape}")
            if v.shape[0] != n:
                raise DatasetFormatError(
                    f"view {i + 1} has {v.shape[0]} rows, view 1 has {n}"
                )
            if not np.all(np.isfinite(v)):
                raise DatasetFormatError(f"view {i + 1} contains non-finite values")
        mask = np.ones(n, dtype=np.int8) if self.aligned_mask is None else self.aligned_mask
        mask = _frozen(mask, np.int8)
        if mask.shape != (n,) or not np.all((mask == 0) | (mask == 1)):
            raise DatasetFormatError("aligned_mask must be a 0/1 vector of length N")
        if self.true_correspondence is None:
            corr = tuple(_frozen(np.arange(n), np.int64) for _ in views)
        else:
            corr = tuple(_frozen(c, np.int64) for c in self.true_correspondence)
        if len(corr) != len(views):
            raise DatasetFormatError("need one correspondence per view")
        for i, c in enumerate(corr):
            if c.shape != (n,) or not np.array_equal(np.sort(c), np.arange(n)):
                raise DatasetFormatError(f"correspondence of view {i + 1} is not a permutation of 0..{n - 1}")
            aligned = mask == 1
            if not np.array_equal(c[aligned], np.flatnonzero(aligned)):
                raise DatasetFormatError(
                    f"correspondence of view {i + 1} moves a row marked aligned"
                )
        labels = None
        if self.labels is not None:
            labels = _frozen(self.labels, np.int64)
            if labels.shape != (n,):
                raise DatasetFormatError(f"labels has length {labels.size}, expected {n}")
            if np.any(labels < 0):
                raise DatasetFormatError("labels must be non-negative")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "aligned_mask", mask)
        object.__setattr__(self, "true_correspondence", corr)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self):
        return self.views[0].shape[0]

    @property
    def n_views(self):
        return len(self.views)

    @property
    def dims(self):
        return tuple(v.shape[1] for v in self.views)

    @property
    def aligned_indices(self):
        return np.flatnonzero(self.aligned_mask == 1)

    @property
    def unaligned_indices(self):
        return np.flatnonzero(self.aligned_mask == 0)

    @property
    def is_fully_aligned(self):
        return bool(np.all(self.aligned_mask == 1))

    @property
    def n_classes(self):
        if self.labels is None:
            raise PreconditionError("dataset has no labels")
        return int(np.unique(self.labels).size)


@dataclass(frozen=True)
class SynthSpec:
    num_views: int = 3
    num_clusters: int = 5
    samples_per_cluster: int = 200
    latent_dim: int = 8
    dims: tuple = (64, 32, 48)
    noise_std: float = 0.1
    cluster_std: float = 0.6
    unaligned_fraction: float = 0.0
    seed: int = 0
    derangement: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.num_views < 2:
            raise PreconditionError("num_views must be >= 2")
        if self.num_clusters < 2:
            raise PreconditionError("num_clusters must be >= 2")
        if len(self.dims) != self.num_views:
            raise PreconditionError(f"got {len(self.dims)} dims for {self.num_views} views")
        if self.samples_per_cluster < 1 or self.latent_dim < 1 or min(self.dims) < 1:
            raise PreconditionError("sizes must be positive")
        if self.noise_std < 0 or self.cluster_std < 0:
            raise PreconditionError("noise_std and cluster_std must be non-negative")
        if not 0.0 <= self.unaligned_fraction < 1.0:
            raise PreconditionError("unaligned_fraction must be in [0, 1)")


def _min_pairwise_distance(c):
    diff = c[:, None, :] - c[None, :, :]
    d = np.sqrt((diff**2).sum(-1))
    return d[np.triu_indices(len(c), 1)].min()


def generate_synthetic(spec: SynthSpec) -> MultiViewDataset:
    """Fully aligned Gaussian-cluster data seen through per-view random linear maps.

    Centers are standard normal in the latent space, redrawn until every pair is
    at least ``6 * noise_std`` apart. Each sample's latent point is its center
    plus isotropic Gaussian spread of ``cluster_std``; view ``v`` observes ``W_v @ latent + noise`` with ``W_v`` entries drawn
    N(0, 1/latent_dim). The ``unaligned_fraction`` field is ignored here; see
    :func:`synthesize`.
    """
    rng = np.random.default_rng(spec.seed)
    separation = 6.0 * spec.noise_std
    for _ in range(100):
        centers = rng.standard_normal((spec.num_clusters, spec.latent_dim))
        if _min_pairwise_distance(centers) >= separation:
            break
    else:
        raise GenerationError(
            f"could not draw {spec.num_clusters} centers separated by {separation:g} in 100 tries"
        )
    n = spec.num_clusters * spec.samples_per_cluster
    labels = rng.permutation(np.repeat(np.arange(spec.num_clusters), spec.samples_per_cluster))
    latent = centers[labels] + spec.cluster_std * rng.standard_normal((n, spec.latent_dim))
    views = []
    for d in spec.dims:
        w = rng.standard_normal((d, spec.latent_dim)) / np.sqrt(spec.latent_dim)
        views.append(latent @ w.T + spec.noise_std * rng.standard_normal((n, d)))
    return MultiViewDataset(views=views, labels=labels)


def synthesize(spec: SynthSpec) -> MultiViewDataset:
    """Generate data and shuffle ``spec.unaligned_fraction`` of it across views."""
    d = generate_synthetic(spec)
    if spec.unaligned_fraction == 0:
        return d
    return apply_misalignment(
        d, spec.unaligned_fraction, seed=spec.seed + 1, derangement=spec.derangement
    )


def _derangement(rng, m):
    if m < 2:
        return np.arange(m)
    while True:
        p = rng.permutation(m)
        if not np.any(p == np.arange(m)):
            return p


def apply_misalignment(d: MultiViewDataset, unaligned_fraction, seed, derangement=False):
    """Shuffle a random subset of rows in every view but the first.

    ``floor(r * N)`` positions are drawn uniformly; each view ``v >= 2`` has the
    rows at those positions permuted independently. The mask is zeroed there and
    the ground-truth correspondence follows the rows.
    """
    if not d.is_fully_aligned:
        raise PreconditionError("apply_misalignment needs a fully aligned dataset")
    if not 0.0 <= unaligned_fraction < 1.0:
        raise PreconditionError(f"unaligned_fraction must be in [0, 1), got {unaligned_fraction}")
    n = d.n_samples
    count = int(np.floor(unaligned_fraction * n))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=count, replace=False))
    views = [d.views[0]]
    corr = [d.true_correspondence[0]]
    for v in range(1, d.n_views):
        perm = _derangement(rng, count) if derangement else rng.permutation(count)
        rows = np.arange(n)
        rows[chosen] = chosen[perm]
        views.append(d.views[v][rows])
        corr.append(d.true_correspondence[v][rows])
    mask = np.ones(n, dtype=np.int8)
    mask[chosen] = 0
    return MultiViewDataset(views=views, labels=d.labels, aligned_mask=mask, true_correspondence=corr)


def restore_alignment(d: MultiViewDataset) -> MultiViewDataset:
    """Undo any shuffling using the ground-truth correspondence."""
    views = []
    for x, corr in zip(d.views, d.true_correspondence):
        out = np.empty_like(x)
        out[corr] = x
        views.append(out)
    n = d.n_samples
    ident = np.arange(n)
    return MultiViewDataset(
        views=views,
        labels=d.labels,
        aligned_mask=np.ones(n, dtype=np.int8),
        true_correspondence=[ident.copy() for _ in views],
    )


def split_indices(n, train_fraction, seed):
    """Shuffled disjoint train/test index arrays; train size is ``round(fraction * n)``."""
    if n < 2:
        raise PreconditionError(f"need at least 2 samples to split, got {n}")
    if not 0.0 < train_fraction < 1.0:
        raise PreconditionError(f"train_fraction must be in (0, 1), got {train_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return perm[:n_train], perm[n_train:]


# --- file I/O ---------------------------------------------------------------


def write_mvw(path, m):
    m = np.ascontiguousarray(m, dtype="<f8")
    with open(path, "wb") as f:
        f.write(MVW_MAGIC)
        f.write(struct.pack("<II", *m.shape))
        f.write(m.tobytes())


def read_mvw(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MVW_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise DatasetFormatError(f"{path}: truncated header")
    rows, cols = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != rows * cols * 8:
        raise DatasetFormatError(
            f"{path}: expected {rows}x{cols} doubles, found {len(body)} bytes"
        )
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(rows, cols)


def write_matrix_csv(path, m):
    np.savetxt(path, np.asarray(m, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_matrix_csv(path):
    try:
        m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    return m


def _read_int_lines(path, allowed=None):
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        try:
            value = int(text)
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: not an integer: {text!r}") from None
        if allowed is not None and value not in allowed:
            raise DatasetFormatError(f"{path}:{lineno}: value {value} not in {sorted(allowed)}")
        if value < 0:
            raise DatasetFormatError(f"{path}:{lineno}: negative value {value}")
        values.append(value)
    return np.asarray(values, dtype=np.int64)


def _write_int_lines(path, values):
    Path(path).write_text("".join(f"{int(v)}\n" for v in values))


def load_dataset(directory) -> MultiViewDataset:
    """Read a dataset directory (``view_<v>.csv|mvw``, optional labels/mask/corr files)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetFormatError(f"{directory}: not a directory")
    found = {}
    for p in directory.iterdir():
        m = _VIEW_RE.match(p.name)
        if m:
            v = int(m.group(1))
            if v in found:
                raise DatasetFormatError(f"view {v} given twice: {found[v].name}, {p.name}")
            found[v] = p
    if not found:
        raise DatasetFormatError(f"{directory}: no view_<v>.csv or view_<v>.mvw files")
    if sorted(found) != list(range(1, len(found) + 1)):
        raise DatasetFormatError(f"{directory}: view numbers must be 1..V, got {sorted(found)}")
    paths = [found[v] for v in range(1, len(found) + 1)]
    views = [read_mvw(p) if p.suffix == ".mvw" else read_matrix_csv(p) for p in paths]
    n = views[0].shape[0]
    for p, m in zip(paths, views):
        if m.shape[0] != n:
            raise DatasetFormatError(
                f"row-count mismatch: {paths[0].name} has {n} rows, {p.name} has {m.shape[0]}"
            )

    def optional(name, allowed=None):
        p = directory / name
        if not p.exists():
            return None
        values = _read_int_lines(p, allowed)
        if values.size != n:
            raise DatasetFormatError(f"{p}: {values.size} entries, expected {n}")
        return values

    labels = optional("labels.csv")
    mask = optional("aligned_mask.csv", allowed={0, 1})
    corr = []
    for v in range(1, len(views) + 1):
        c = optional(f"corr_{v}.csv")
        if c is not None and not np.array_equal(np.sort(c), np.arange(n)):
            raise DatasetFormatError(f"corr_{v}.csv is not a bijection on 0..{n - 1}")
        corr.append(np.arange(n) if c is None else c)
    return MultiViewDataset(views=views, labels=labels, aligned_mask=mask, true_correspondence=corr)


def save_dataset(d: MultiViewDataset, directory, binary=False):
    """Write ``d`` in the directory layout read by :func:`load_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for v, m in enumerate(d.views, start=1):
        if binary:
            p = directory / f"view_{v}.mvw"
            write_mvw(p, m)
        else:
            p = directory / f"view_{v}.csv"
            write_matrix_csv(p, m)
        written.append(p)
    if d.labels is not None:
        _write_int_lines(directory / "labels.csv", d.labels)
        written.append(directory / "labels.csv")
    _write_int_lines(directory / "aligned_mask.csv", d.aligned_mask)
    written.append(directory / "aligned_mask.csv")
    for v, c in enumerate(d.true_correspondence, start=1):
        _write_int_lines(directory / f"corr_{v}.csv", c)
        written.append(directory / f"corr_{v}.csv")
    return written
