"""Mini-batch training of the view-specific autoencoders."""

import csv
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autoencoder as ae_mod
from .errors import PreconditionError, ShapeError
from .graph import build_relation_graphs, fuse_cross_view
from .loss import BatchBundle, total_loss, uniform_profile, weight_profile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-2
    k: int = 3
    dz: int = 32
    hidden: tuple = (128, 64, 64)
    batch_size: int = 256
    epochs: int = 500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    temperature: float = 1.0
    reconstruction: bool = True
    weighting: str = "index"  # "index" (1/k profile) or "uniform"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.batch_size < 1:
            raise PreconditionError("batch_size must be >= 1")
        if self.epochs < 1:
            raise PreconditionError("epochs must be >= 1")
        if not self.lr > 0:
            raise PreconditionError("lr must be > 0")
        if self.lam < 0:
            raise PreconditionError("lambda must be >= 0")
        if self.k < 1 or self.dz < 1:
            raise PreconditionError("k and dz must be >= 1")
        if not self.temperature > 0:
            raise PreconditionError("temperature must be > 0")
        if self.weighting not in ("index", "uniform"):
            raise PreconditionError(f"unknown weighting {self.weighting!r}")

    def weights(self):
        return weight_profile(self.k) if self.weighting == "index" else uniform_profile(self.k)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    reconstruction: float
    contrastive: float
    total: float
    seconds: float = 0.0


def adam_step(params, grads, state, config):
    """Bias-corrected adaptive-moment update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(f"{len(params)} parameters, {len(grads)} gradients, {len(state.m)} moments")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


def forward_batch(model, dataset, cross, positions):
    """Encode/decode the batch rows and encode every cross-view neighbor.

    Returns the loss bundle plus the traces needed by :func:`backward_batch`.
    """
    n_views = dataset.n_views
    m = len(positions)
    k = cross.k
    xs, zs, xhats, nbrs, traces = [], [], [], [], []
    for i in range(n_views):
        xb = dataset.views[i][positions]
        zb, t_enc = ae_mod.encode(model, i, xb)
        xhat, t_dec = ae_mod.decode(model, i, zb)
        # neighbors repeat heavily, so each distinct row is encoded once
        unique, inverse = np.unique(cross.refs[:, positions, i, :], return_inverse=True)
        zn, t_nbr = ae_mod.encode(model, i, dataset.views[i][unique])
        xs.append(xb)
        zs.append(zb)
        xhats.append(xhat)
        nbrs.append(zn[inverse.reshape(-1)].reshape(n_views, m, k, -1))
        traces.append((t_enc, t_dec, (t_nbr, inverse.reshape(-1), unique.size)))
    bundle = BatchBundle(x=xs, z=np.stack(zs), xhat=xhats, nbr=np.stack(nbrs, axis=2))
    return bundle, traces


def backward_batch(model, traces, result):
    """Flat parameter gradients (ordered like ``model.parameters()``)."""
    per_view = []
    for i, (t_enc, t_dec, (t_nbr, inverse, n_unique)) in enumerate(traces):
        enc, dec, _ = ae_mod.backward(model, i, t_enc, t_dec, result.grad_z[i], result.grad_xhat[i])
        g_nbr = result.grad_nbr[:, :, i].reshape(-1, result.grad_nbr.shape[-1])
        g_unique = np.zeros((n_unique, g_nbr.shape[1]))
        np.add.at(g_unique, inverse, g_nbr)
        enc_nbr, _, _ = ae_mod.backward(model, i, t_nbr, grad_z=g_unique)
        enc = [(dw + dw2, db + db2) for (dw, db), (dw2, db2) in zip(enc, enc_nbr)]
        per_view.append((enc, dec))
    return ae_mod.flatten_grads(per_view)


def batch_loss_and_grads(model, dataset, cross, positions, config):
    bundle, traces = forward_batch(model, dataset, cross, positions)
    result = total_loss(
        bundle, config.lam, config.weights(), config.temperature, config.reconstruction
    )
    return result, backward_batch(model, traces, result)


def epoch_batches(n, batch_size, epoch_seed):
    order = np.random.default_rng(epoch_seed).permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def train_epoch(model, dataset, cross, state, config, epoch_seed, epoch=0):
    """One pass over a shuffled partition of all N positions; updates ``model`` in place."""
    start = time.perf_counter()
    rec = cgc = tot = 0.0
    params = model.parameters()
    for positions in epoch_batches(dataset.n_samples, config.batch_size, epoch_seed):
        result, grads = batch_loss_and_grads(model, dataset, cross, positions, config)
        adam_step(params, grads, state, config)
        model.mark_updated()
        share = len(positions) / dataset.n_samples
        rec += share * result.reconstruction
        cgc += share * result.contrastive
        tot += share * result.total
    report = EpochReport(epoch, rec, cgc, tot, time.perf_counter() - start)
    return model, state, report


def fit(dataset, config, cross=None, model=None, progress=None):
    """Build the cross-view graph (unless given) and train for ``config.epochs`` epochs.

    Returns ``(model, curve)`` where ``curve`` holds one :class:`EpochReport` per epoch.
    """
    if cross is None:
        cross = fuse_cross_view(build_relation_graphs(dataset, config.k), dataset)
    if model is None:
        model = ae_mod.init(dataset.dims, config.hidden, config.dz, config.seed)
    else:
        ae_mod.check_compatible(model, dataset)
    state = OptimizerState.zeros_like(model.parameters())
    curve = []
    for epoch in range(1, config.epochs + 1):
        model, state, report = train_epoch(
            model, dataset, cross, state, config, epoch_seed=[config.seed, epoch], epoch=epoch
        )
        curve.append(report)
        if progress is not None:
            progress(report)
        if epoch == 1 or epoch % 50 == 0:
            log.debug("epoch %d rec=%.5f cgc=%.5f total=%.5f", epoch, report.reconstruction,
                      report.contrastive, report.total)
    return model, curve


def write_curve_csv(curve, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "L_REC", "L_CGC", "total"])
        for r in curve:
            w.writerow([r.epoch, repr(r.reconstruction), repr(r.contrastive), repr(r.total)])
