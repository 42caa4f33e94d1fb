"""Dense classifier models over flat parameter vectors.

A model is a :class:`ModelSpec` plus a flat float64 vector holding every
weight and bias.  The forward pass is written against the ops in
:mod:`clkit.autodiff`, so the same code serves plain prediction, taped
gradient evaluation, and curvature passes.  Hidden layers use the swish
activation ``z * sigmoid(z)``; the output layer is linear and the loss
functions own the link.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("swish",)
HEADS = ("categorical", "bernoulli", "scalar")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a dense network: sizes, activation, and output head."""

    input_dim: int
    hidden_sizes: tuple = ()
    output_dim: int = 1
    activation: str = "swish"
    head: str = "categorical"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.head in ("bernoulli", "scalar") and self.output_dim != 1:
            raise ValueError(f"head {self.head!r} requires output_dim=1")

    @property
    def layer_dims(self):
        """(fan_in, fan_out) per affine layer, input to output."""
        sizes = (self.input_dim,) + self.hidden_sizes + (self.output_dim,)
        return tuple(zip(sizes[:-1], sizes[1:]))

    @property
    def param_count(self):
        return sum(fi * fo + fo for fi, fo in self.layer_dims)

    def param_slices(self):
        """Offsets of each layer's weight block and bias block in the flat vector."""
        out, pos = [], 0
        for fi, fo in self.layer_dims:
            w = (pos, pos + fi * fo)
            b = (w[1], w[1] + fo)
            out.append((w, b, (fi, fo)))
            pos = b[1]
        return out


def init_params(spec, seed):
    """Fresh parameter vector: Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    parts = []
    for fi, fo in spec.layer_dims:
        parts.append(rng.normal(0.0, 1.0 / np.sqrt(fi), size=fi * fo))
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


def _swish(z):
    return z * ad.sigmoid(z)


def forward(spec, theta, X):
    """Logits for every row of X.

    Either argument may be a traced :class:`~clkit.autodiff.Tensor`:
    training differentiates through ``theta``, while penalty surrogates
    differentiate through ``X`` with fixed weights.
    """
    xshape = np.shape(ad.detach(X))
    if len(xshape) != 2 or xshape[1] != spec.input_dim:
        raise ValueError(f"input must have shape (n, {spec.input_dim}), got {xshape}")
    if np.shape(ad.detach(theta))[0] != spec.param_count:
        raise ValueError(
            f"parameter vector has length {np.shape(ad.detach(theta))[0]}, "
            f"model expects {spec.param_count}"
        )
    h = X
    layers = spec.param_slices()
    for i, ((w0, w1), (b0, b1), shape) in enumerate(layers):
        W = ad.reshape(ad.slice1d(theta, w0, w1), shape)
        b = ad.slice1d(theta, b0, b1)
        z = h @ W + b
        h = _swish(z) if i < len(layers) - 1 else z
    return h


def forward_many(spec, thetas, X):
    """Logits for a batch of parameter vectors at once, shape (S, n, output_dim).

    Plain numpy fast path used when a sample of parameter points must be
    scored against the same data, e.g. surrogate fitting targets.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != spec.param_count:
        raise ValueError("thetas must have shape (S, param_count)")
    S = thetas.shape[0]
    h = np.broadcast_to(X, (S,) + X.shape)
    layers = spec.param_slices()
    for i, ((w0, w1), (b0, b1), shape) in enumerate(layers):
        W = thetas[:, w0:w1].reshape((S,) + shape)
        b = thetas[:, b0:b1]
        z = np.einsum("sni,sio->sno", h, W) + b[:, None, :]
        if i < len(layers) - 1:
            h = z * _stable_sigmoid(z)
        else:
            h = z
    return h


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(spec, theta, X):
    """Class probabilities per row; requires a categorical or bernoulli head."""
    logits = ad.detach(forward(spec, theta, np.asarray(X, dtype=np.float64)))
    if spec.head == "categorical":
        return softmax(logits)
    if spec.head == "bernoulli":
        return _stable_sigmoid(logits)
    raise ValueError("predict_proba requires a categorical or bernoulli head")


def predict_class(spec, theta, X):
    """Hard class indices; argmax with ties broken toward the lowest index."""
    probs = predict_proba(spec, theta, X)
    if spec.head == "categorical":
        return np.argmax(probs, axis=1)
    return (probs[:, 0] >= 0.5).astype(np.int64)
