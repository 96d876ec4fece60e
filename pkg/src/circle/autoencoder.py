"""View-specific fully connected autoencoders with reverse-mode gradients."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, ShapeError, TraceError

MODEL_MAGIC = b"CIR1"
LAYERS_PER_NET = 4


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)


@dataclass(frozen=True)
class ForwardTrace:
    """Inputs and pre-activations of every layer from one forward call."""

    owner: tuple
    inputs: tuple
    preacts: tuple


class MLP:
    """Affine layers with ReLU between them and a linear output layer."""

    def __init__(self, layers):
        self.layers = list(layers)
        self.version = 0

    @classmethod
    def glorot(cls, widths, rng):
        layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append(Layer(rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
        return cls(layers)

    @property
    def in_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[1]

    def _owner(self):
        return (id(self), self.version)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected batch with {self.in_dim} columns, got shape {x.shape}")
        inputs, preacts = [], []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            inputs.append(h)
            a = h @ layer.weight + layer.bias
            preacts.append(a)
            h = a if i == last else np.maximum(a, 0.0)
        return h, ForwardTrace(self._owner(), tuple(inputs), tuple(preacts))

    def backward(self, trace, grad_out):
        """Return ``([(dW, db), ...], d_input)`` for upstream gradient ``grad_out``."""
        if trace.owner != self._owner():
            raise TraceError("trace was produced by a different network or stale parameters")
        if len(trace.inputs) != len(self.layers):
            raise TraceError("trace depth does not match network")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != trace.preacts[-1].shape:
            raise ShapeError(f"upstream gradient shape {g.shape} != output shape {trace.preacts[-1].shape}")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            if i != len(self.layers) - 1:
                # ReLU subgradient at 0 is taken as 0
                g = g * (trace.preacts[i] > 0.0)
            grads[i] = (trace.inputs[i].T @ g, g.sum(axis=0))
            g = g @ self.layers[i].weight.T
        return grads, g

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out


class ViewAutoencoder:
    """One encoder/decoder pair per view, all encoders sharing the output width ``dz``."""

    def __init__(self, encoders, decoders):
        if len(encoders) != len(decoders):
            raise ShapeError("need one decoder per encoder")
        dzs = {e.out_dim for e in encoders}
        if len(dzs) != 1:
            raise ShapeError(f"encoders disagree on representation width: {sorted(dzs)}")
        for v, (e, d) in enumerate(zip(encoders, decoders)):
            if d.in_dim != e.out_dim or d.out_dim != e.in_dim:
                raise ShapeError(f"view {v + 1}: decoder {d.in_dim}->{d.out_dim} does not mirror encoder")
        self.encoders = list(encoders)
        self.decoders = list(decoders)

    @property
    def n_views(self):
        return len(self.encoders)

    @property
    def dz(self):
        return self.encoders[0].out_dim

    @property
    def dims(self):
        return tuple(e.in_dim for e in self.encoders)

    def parameters(self):
        """Flat parameter list in a fixed order: per view, encoder then decoder, W then b."""
        out = []
        for e, d in zip(self.encoders, self.decoders):
            out.extend(e.parameters())
            out.extend(d.parameters())
        return out

    def mark_updated(self):
        """Invalidate outstanding traces after an in-place parameter update."""
        for net in self.encoders + self.decoders:
            net.version += 1

    def copy(self):
        clone = lambda net: MLP(Layer(l.weight.copy(), l.bias.copy()) for l in net.layers)
        return ViewAutoencoder([clone(e) for e in self.encoders], [clone(d) for d in self.decoders])


def init(dims, hidden, dz, seed):
    """Build a randomly initialised model for views of widths ``dims``.

    ``dims`` may also be a dataset, in which case its view widths are used.
    Every view draws from its own seeded stream, so view v's parameters do not
    depend on how many views there are.
    """
    if hasattr(dims, "dims"):
        dims = dims.dims
    hidden = tuple(int(h) for h in hidden)
    if len(hidden) != LAYERS_PER_NET - 1:
        raise ShapeError(f"need {LAYERS_PER_NET - 1} hidden widths, got {len(hidden)}")
    if min(hidden) < 1 or dz < 1 or min(dims) < 1:
        raise ShapeError("layer widths must be positive")
    encoders, decoders = [], []
    for v, d in enumerate(dims):
        rng = np.random.default_rng([seed, v])
        encoders.append(MLP.glorot((d, *hidden, dz), rng))
        decoders.append(MLP.glorot((dz, *hidden[::-1], d), rng))
    return ViewAutoencoder(encoders, decoders)


def check_compatible(ae, dataset):
    """Raise CompatibilityError unless the model was built for the dataset's view widths."""
    if ae.n_views != dataset.n_views:
        raise CompatibilityError(f"model has {ae.n_views} views, dataset has {dataset.n_views}")
    for v, (m, d) in enumerate(zip(ae.dims, dataset.dims), start=1):
        if m != d:
            raise CompatibilityError(f"view {v}: model expects {m} features, dataset has {d}")


def encode(ae, v, x):
    return ae.encoders[v].forward(x)


def decode(ae, v, z):
    return ae.decoders[v].forward(z)


def backward(ae, v, enc_trace, dec_trace=None, grad_z=None, grad_xhat=None):
    """Gradients of a loss through view ``v``'s autoencoder.

    ``grad_z`` is the loss gradient w.r.t. the encoder output, ``grad_xhat`` the
    gradient w.r.t. the reconstruction (requires ``dec_trace``). Returns
    ``(encoder_grads, decoder_grads, grad_x)``; decoder grads are ``None`` when
    no decoder trace is given.
    """
    z_shape = enc_trace.preacts[-1].shape
    total = np.zeros(z_shape) if grad_z is None else np.asarray(grad_z, dtype=np.float64)
    if total.shape != z_shape:
        raise ShapeError(f"grad_z shape {total.shape} != representation shape {z_shape}")
    dec_grads = None
    if dec_trace is not None:
        if dec_trace.inputs[0].shape != z_shape:
            raise TraceError("decoder trace does not match encoder trace")
        if grad_xhat is None:
            grad_xhat = np.zeros(dec_trace.preacts[-1].shape)
        dec_grads, gz = ae.decoders[v].backward(dec_trace, grad_xhat)
        total = total + gz
    enc_grads, gx = ae.encoders[v].backward(enc_trace, total)
    return enc_grads, dec_grads, gx


def flatten_grads(per_view):
    """Order ``[(enc_grads, dec_grads), ...]`` like :meth:`ViewAutoencoder.parameters`."""
    out = []
    for enc, dec in per_view:
        for dw, db in list(enc) + list(dec):
            out.extend((dw, db))
    return out


def save_model(ae, path):
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", ae.n_views))
        for e, d in zip(ae.encoders, ae.decoders):
            for layer in e.layers + d.layers:
                w = np.ascontiguousarray(layer.weight, dtype="<f8")
                f.write(struct.pack("<II", *w.shape))
                f.write(w.tobytes())
                f.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def load_model(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ShapeError(f"{path}: not a model file (magic {raw[:4]!r})")
    (n_views,) = struct.unpack_from("<I", raw, 4)
    pos = 8
    nets = []
    for _ in range(2 * n_views):
        layers = []
        for _ in range(LAYERS_PER_NET):
            rows, cols = struct.unpack_from("<II", raw, pos)
            pos += 8
            w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols)
            pos += 8 * rows * cols
            b = np.frombuffer(raw, dtype="<f8", count=cols, offset=pos)
            pos += 8 * cols
            layers.append(Layer(w.astype(np.float64), b.astype(np.float64)))
        nets.append(MLP(layers))
    if pos != len(raw):
        raise ShapeError(f"{path}: {len(raw) - pos} trailing bytes")
    return ViewAutoencoder(nets[0::2], nets[1::2])
