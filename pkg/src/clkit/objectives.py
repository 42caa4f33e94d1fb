"""Loss terms and their assembly into the recursive training objective.

Likelihood terms sum over examples instead of averaging.  Summation keeps
the curvature of a dataset equal to the sum of its mini-batch curvatures,
which the consolidation methods rely on, and makes every penalty scale
consistently against the data term.

Each term is a callable objective over the flat parameter vector.  Data
terms additionally support ``restrict`` (row subsets for mini-batching)
and ``value_many`` (plain numpy evaluation at a batch of parameter
points, used to build surrogate fitting targets).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn


def _check_labels(y, n_classes):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be a 1-D array")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == y.astype(np.int64)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        bad = int(y.min()) if y.min() < 0 else int(y.max())
        raise ValueError(f"label {bad} outside [0, {n_classes})")
    return y


def _logsumexp_rows(logits):
    # max is detached; the identity holds for any constant shift
    m = np.max(ad.detach(logits), axis=1, keepdims=True)
    shifted = logits - m
    return ad.log(ad.sum(ad.exp(shifted), axis=1)) + m[:, 0]


def _np_logsumexp(z):
    m = z.max(axis=-1, keepdims=True)
    return np.log(np.exp(z - m).sum(axis=-1)) + m[..., 0]


def _softplus(z):
    # max(z, 0) + log1p(exp(-|z|)), branch mask taken from the detached value
    pos = ad.detach(z) > 0
    return ad.where(pos, z, 0.0) + ad.log1p(ad.exp(-ad.absolute(z)))


def _np_softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


class _DataLoss:
    """Base for likelihood terms bound to (model, inputs, labels)."""

    def __init__(self, spec, X, y):
        self.spec = spec
        self.X = np.asarray(X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[1] != spec.input_dim:
            raise ValueError("X must have shape (n, input_dim)")
        self.y = y
        if len(self.y) != self.X.shape[0]:
            raise ValueError("X and y row counts differ")

    @property
    def n_rows(self):
        return self.X.shape[0]

    def _clone_rows(self, idx):
        raise NotImplementedError

    def restrict(self, idx):
        """Same term on a row subset."""
        return self._clone_rows(np.asarray(idx, dtype=np.int64))


class CategoricalNLL(_DataLoss):
    """Summed cross entropy of a softmax over the model logits."""

    name = "categorical_nll"

    def __init__(self, spec, X, y):
        if spec.head != "categorical":
            raise ValueError("CategoricalNLL requires a categorical head")
        super().__init__(spec, X, _check_labels(y, spec.output_dim))

    def _clone_rows(self, idx):
        return CategoricalNLL(self.spec, self.X[idx], self.y[idx])

    def __call__(self, theta):
        logits = nn.forward(self.spec, theta, self.X)
        lse = _logsumexp_rows(logits)
        picked = ad.take_per_row(logits, self.y)
        return ad.sum(lse - picked)

    def value_many(self, thetas):
        logits = nn.forward_many(self.spec, thetas, self.X)
        lse = _np_logsumexp(logits)
        picked = logits[:, np.arange(self.X.shape[0]), self.y]
        return (lse - picked).sum(axis=1)


class BernoulliNLL(_DataLoss):
    """Summed binary cross entropy on the scalar logit, stable log-sigmoid form."""

    name = "bernoulli_nll"

    def __init__(self, spec, X, y):
        if spec.head != "bernoulli":
            raise ValueError("BernoulliNLL requires a bernoulli head")
        y = _check_labels(y, 2)
        super().__init__(spec, X, y)

    def _clone_rows(self, idx):
        return BernoulliNLL(self.spec, self.X[idx], self.y[idx])

    def __call__(self, theta):
        z = ad.reshape(nn.forward(self.spec, theta, self.X), (self.X.shape[0],))
        yf = self.y.astype(np.float64)
        # -log sigmoid(z) = softplus(-z) and -log(1 - sigmoid(z)) = softplus(z)
        return ad.sum(yf * _softplus(-z) + (1.0 - yf) * _softplus(z))

    def value_many(self, thetas):
        z = nn.forward_many(self.spec, thetas, self.X)[:, :, 0]
        yf = self.y.astype(np.float64)
        return (yf * _np_softplus(-z) + (1.0 - yf) * _np_softplus(z)).sum(axis=1)


class WeightedCategoricalNLL(_DataLoss):
    """Cross entropy with per-row weight m / count(class), m the smallest count."""

    name = "weighted_categorical_nll"

    def __init__(self, spec, X, y, class_counts):
        if spec.head != "categorical":
            raise ValueError("WeightedCategoricalNLL requires a categorical head")
        counts = np.asarray(class_counts, dtype=np.int64)
        if counts.shape != (spec.output_dim,):
            raise ValueError("class_counts must have one entry per class")
        if np.any(counts < 1):
            raise ValueError("class counts must all be at least 1")
        super().__init__(spec, X, _check_labels(y, spec.output_dim))
        self.class_counts = counts
        self._row_weights = counts.min() / counts[self.y]

    def _clone_rows(self, idx):
        return WeightedCategoricalNLL(self.spec, self.X[idx], self.y[idx], self.class_counts)

    def __call__(self, theta):
        logits = nn.forward(self.spec, theta, self.X)
        lse = _logsumexp_rows(logits)
        picked = ad.take_per_row(logits, self.y)
        return ad.sum(self._row_weights * (lse - picked))

    def value_many(self, thetas):
        logits = nn.forward_many(self.spec, thetas, self.X)
        lse = _np_logsumexp(logits)
        picked = logits[:, np.arange(self.X.shape[0]), self.y]
        return (self._row_weights * (lse - picked)).sum(axis=1)


class GaussianNLL(_DataLoss):
    """Half the summed squared error of a scalar-head model, unit noise variance."""

    name = "gaussian_nll"

    def __init__(self, spec, X, y):
        if spec.head != "scalar":
            raise ValueError("GaussianNLL requires a scalar head")
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 1:
            raise ValueError("targets must be a 1-D array")
        super().__init__(spec, X, y)

    def _clone_rows(self, idx):
        return GaussianNLL(self.spec, self.X[idx], self.y[idx])

    def __call__(self, theta):
        out = ad.reshape(nn.forward(self.spec, theta, self.X), (self.X.shape[0],))
        r = out - self.y
        return 0.5 * ad.sum(r * r)

    def value_many(self, thetas):
        out = nn.forward_many(self.spec, thetas, self.X)[:, :, 0]
        return 0.5 * ((out - self.y) ** 2).sum(axis=1)


class GaussianPrior:
    """Standard Gaussian negative log prior, half the squared parameter norm."""

    name = "gaussian_prior"

    def __call__(self, theta):
        return 0.5 * ad.sum(theta * theta)

    def value_many(self, thetas):
        thetas = np.asarray(thetas, dtype=np.float64)
        return 0.5 * (thetas**2).sum(axis=1)


class QuadraticPenalty:
    """Quadratic form in (theta - anchor) weighted by accumulated curvature.

    ``curvature`` is either a dense symmetric matrix or a nonnegative
    diagonal vector; the penalty is (lam / 2) d^T C d with d the offset
    from the anchor, elementwise when diagonal.
    """

    name = "quadratic_penalty"

    def __init__(self, anchor, curvature, lam):
        self.anchor = np.asarray(anchor, dtype=np.float64)
        self.curvature = np.asarray(curvature, dtype=np.float64)
        d = self.anchor.shape[0]
        if self.curvature.shape not in ((d,), (d, d)):
            raise ValueError(
                f"curvature shape {self.curvature.shape} does not match anchor length {d}"
            )
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)

    def __call__(self, theta):
        if np.shape(ad.detach(theta))[0] != self.anchor.shape[0]:
            raise ValueError("parameter vector length does not match penalty dimension")
        diff = theta - self.anchor
        if self.curvature.ndim == 1:
            return (0.5 * self.lam) * ad.sum(self.curvature * diff * diff)
        col = ad.reshape(diff, (self.anchor.shape[0], 1))
        return (0.5 * self.lam) * ad.sum(col * (self.curvature @ col))

    def value_many(self, thetas):
        diff = np.asarray(thetas, dtype=np.float64) - self.anchor
        if self.curvature.ndim == 1:
            return (0.5 * self.lam) * (self.curvature * diff * diff).sum(axis=1)
        return (0.5 * self.lam) * np.einsum("si,ij,sj->s", diff, self.curvature, diff)


class NeuralPenalty:
    """Scalar surrogate network evaluated at theta, scaled by lam.

    The surrogate's own weights are fixed constants here; gradients flow
    through theta, which enters the network as its input row.
    """

    name = "neural_penalty"

    def __init__(self, surrogate_spec, phi, lam):
        if surrogate_spec.head != "scalar":
            raise ValueError("the surrogate must have a scalar head")
        self.surrogate_spec = surrogate_spec
        self.phi = np.asarray(phi, dtype=np.float64)
        if self.phi.shape[0] != surrogate_spec.param_count:
            raise ValueError("surrogate parameter vector does not match its spec")
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)

    def __call__(self, theta):
        d = np.shape(ad.detach(theta))[0]
        if d != self.surrogate_spec.input_dim:
            raise ValueError(
                f"surrogate expects input width {self.surrogate_spec.input_dim}, got {d}"
            )
        row = ad.reshape(theta, (1, d))
        out = nn.forward(self.surrogate_spec, self.phi, row)
        return self.lam * ad.reshape(out, ())

    def value_many(self, thetas):
        out = ad.detach(nn.forward(self.surrogate_spec, self.phi, np.asarray(thetas)))
        return self.lam * out[:, 0]


def huber(a, b, delta=1.0):
    """Huber loss of the residual a - b: quadratic inside delta, linear outside."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = a - b
    absr = ad.absolute(r)
    small = ad.detach(absr) <= delta
    return ad.sum(ad.where(small, 0.5 * r * r, delta * (absr - 0.5 * delta)))


@dataclass
class RecursiveLoss:
    """Training objective for one task: a penalty plus the current data term.

    ``minibatch_count`` is the divisor applied to the penalty when the
    objective is evaluated one mini-batch at a time; the trainer sets it
    to ceil(n / batch_size) so the per-batch objectives sum back to the
    full objective over an epoch.
    """

    penalty: object
    nll: object
    minibatch_count: int = 1

    def __post_init__(self):
        if self.minibatch_count < 1:
            raise ValueError("minibatch_count must be positive")

    def total(self, theta):
        return self.penalty(theta) + self.nll(theta)

    def __call__(self, theta):
        return self.total(theta)

    def batch_objective(self, idx):
        """Objective for one mini-batch: batch data term plus the scaled penalty."""
        term = self.nll.restrict(idx)
        penalty = self.penalty
        scale = 1.0 / self.minibatch_count

        def objective(theta):
            return term(theta) + scale * penalty(theta)

        objective.name = getattr(self.nll, "name", "loss") + "+penalty"
        return objective


def exact_joint_loss(prior, nll_terms, theta):
    """Prior plus the sum of every retained task's data term, evaluated directly.

    This is the objective the consolidation methods approximate; it is
    used as the reference both for joint training and for oracle checks.
    """
    total = prior(theta)
    for term in nll_terms:
        total = total + term(theta)
    return total
