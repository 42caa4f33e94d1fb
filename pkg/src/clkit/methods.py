"""Continual-learning methods as scikit-learn style classifiers.

Every method trains one single-headed dense classifier over a shared
label space, one task at a time, through ``partial_fit``.  The first call
must declare the full label space with ``classes=``; later calls continue
from the current weights.  What distinguishes the methods is the penalty
attached to each new task's data term:

* fine-tuning keeps only the standard Gaussian prior,
* joint training retains all data and minimizes the exact summed loss,
* quadratic consolidation accumulates exact task Hessians into a full
  quadratic penalty around the last optimum,
* neural consolidation fits a scalar surrogate network to the previous
  loss surface on ball-sampled parameter points,
* EWC accumulates a diagonal empirical Fisher approximation,
* synaptic intelligence accumulates a per-parameter path importance.

The task-step functions underneath the estimators are exposed as well;
they operate on any data term, not just classification, which makes them
directly checkable against closed-form oracles.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from . import nn
from .objectives import (
    BernoulliNLL,
    CategoricalNLL,
    GaussianPrior,
    NeuralPenalty,
    QuadraticPenalty,
    RecursiveLoss,
    huber,
)
from .optim import OptimizerState, TrainConfig, adam_step, one_cycle_lr, train

__all__ = [
    "PenaltyState",
    "ConsolidatorState",
    "SiState",
    "sample_uniform_ball",
    "fit_consolidator",
    "quadratic_consolidation_step",
    "ewc_step",
    "si_step",
    "neural_consolidation_step",
    "fit_sequence",
    "FineTuneClassifier",
    "JointClassifier",
    "QuadraticConsolidationClassifier",
    "NeuralConsolidationClassifier",
    "EWCClassifier",
    "SynapticIntelligenceClassifier",
    "METHOD_REGISTRY",
]


# ---------------------------------------------------------------------------
# method state
# ---------------------------------------------------------------------------


@dataclass
class PenaltyState:
    """Anchor and accumulated curvature of the quadratic penalty.

    Before any task the curvature is the identity (dense) or all ones
    (diagonal) and the anchor is zero, which encodes the standard
    Gaussian prior as the zeroth term of the accumulated sum.
    """

    anchor: np.ndarray
    curvature: np.ndarray
    tasks_seen: int = 0

    @classmethod
    def initial(cls, dim, diagonal=False):
        curv = np.ones(dim) if diagonal else np.eye(dim)
        return cls(anchor=np.zeros(dim), curvature=curv, tasks_seen=0)


@dataclass
class ConsolidatorState:
    """Trained surrogate network and its fitting hyperparameters."""

    spec: nn.ModelSpec
    phi: np.ndarray = None
    lam: float = 1.0
    radius: float = 10.0
    reg: float = 0.1
    sample_size: int = 64
    fit_steps: int = 1000
    tasks_seen: int = 0


@dataclass
class SiState:
    """Per-parameter importance built from the optimization path.

    ``path_accum`` integrates minus gradient times realized update during
    training; at a task boundary it is converted into nonnegative
    importance with a damped squared-displacement denominator.
    """

    importance: np.ndarray
    path_accum: np.ndarray
    anchor: np.ndarray
    damping: float = 0.1
    tasks_seen: int = 0

    @classmethod
    def initial(cls, theta0, damping):
        d = theta0.shape[0]
        return cls(
            importance=np.zeros(d),
            path_accum=np.zeros(d),
            anchor=np.asarray(theta0, dtype=np.float64).copy(),
            damping=float(damping),
        )


# ---------------------------------------------------------------------------
# sampling and surrogate fitting
# ---------------------------------------------------------------------------


def sample_uniform_ball(center, radius, n, seed):
    """n points uniform in the solid ball of the given radius around center.

    Directions come from normalized Gaussian draws and radii from
    ``radius * U**(1/d)``, the inverse radial CDF of the uniform ball.
    ``seed`` may be an integer or an existing Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    center = np.asarray(center, dtype=np.float64)
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    d = center.shape[0]
    raw = rng.standard_normal((n, d))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = radius * rng.random(n) ** (1.0 / d)
    return center + (raw / norms) * radii[:, None]


def fit_consolidator(
    target_fn,
    center,
    spec,
    *,
    radius,
    sample_size=64,
    fit_steps=1000,
    lr=1e-3,
    reg=0.1,
    delta=1.0,
    seed=0,
    phi0=None,
):
    """Fit a scalar surrogate to a loss surface around a center point.

    Every descent step draws a fresh uniform-ball sample, evaluates the
    target there, and takes one Adam step on the regularized Huber fit
    loss ``0.5 * reg * ||phi||^2 + sum_i huber(surrogate(x_i), target_i)``
    under a one-cycle schedule.  Starts from a fresh initialization
    unless ``phi0`` warm-starts it.  Returns the trained surrogate
    weights.
    """
    center = np.asarray(center, dtype=np.float64)
    if spec.head != "scalar" or spec.input_dim != center.shape[0]:
        raise ValueError(
            f"surrogate must have a scalar head and input width {center.shape[0]}"
        )
    phi = nn.init_params(spec, seed) if phi0 is None else np.asarray(phi0, dtype=np.float64).copy()
    rng = np.random.default_rng((seed, 1))
    state = OptimizerState.zeros(phi.shape[0])
    for step in range(fit_steps):
        pts = sample_uniform_ball(center, radius, sample_size, rng)
        targets = np.asarray(target_fn(pts), dtype=np.float64)
        if not np.isfinite(targets).all():
            bad = int(np.flatnonzero(~np.isfinite(targets))[0])
            raise ad.EvaluationError(
                f"surrogate target is non-finite at sampled point {bad} "
                f"(distance {np.linalg.norm(pts[bad] - center):.3g} from center)"
            )

        def objective(phi_t):
            out = ad.reshape(nn.forward(spec, phi_t, pts), (pts.shape[0],))
            return huber(out, targets, delta) + 0.5 * reg * ad.sum(phi_t * phi_t)

        objective.name = "consolidator_fit"
        _, g = ad.value_and_grad(objective, phi)
        state, phi = adam_step(state, phi, g, one_cycle_lr(step, fit_steps, lr))
    return phi


def _value_many_batched(term, thetas, batch_size):
    """Evaluate a data term at many parameter points, one row chunk at a time."""
    n = term.n_rows
    out = np.zeros(len(thetas))
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        out += term.restrict(idx).value_many(thetas)
    return out


# ---------------------------------------------------------------------------
# task steps
# ---------------------------------------------------------------------------


def _contiguous_chunks(term, batch_size):
    n = term.n_rows
    return [
        term.restrict(np.arange(start, min(start + batch_size, n)))
        for start in range(0, n, batch_size)
    ]


def quadratic_consolidation_step(state, nll, lam, cfg, theta0, hessian_batch_size=None):
    """One task of quadratic consolidation.

    Trains on the quadratic penalty (the plain prior for the first task)
    plus the data term, then computes the exact Hessian of the data term
    at the new optimum over mini-batches and adds it to the accumulated
    curvature.  Returns the new optimum and updated state.
    """
    if state.tasks_seen == 0:
        penalty = GaussianPrior()
    else:
        penalty = QuadraticPenalty(state.anchor, state.curvature, lam)
    theta = train(RecursiveLoss(penalty, nll), cfg, theta0)
    chunks = _contiguous_chunks(nll, hessian_batch_size or cfg.batch_size)
    task_hessian = ad.accumulate_hessian_over_batches(chunks, theta)
    new_state = PenaltyState(
        anchor=theta.copy(),
        curvature=state.curvature + task_hessian,
        tasks_seen=state.tasks_seen + 1,
    )
    return theta, new_state


def empirical_fisher_diagonal(nll, theta):
    """Sum over examples of the squared per-example gradient of the data term."""
    theta = np.asarray(theta, dtype=np.float64)
    total = np.zeros(theta.shape[0])
    for i in range(nll.n_rows):
        g = ad.grad(nll.restrict(np.array([i])), theta)
        total += g * g
    return total


def ewc_step(state, nll, lam, cfg, theta0):
    """One task of EWC with the cumulative single-penalty correction.

    The diagonal curvature accumulates the empirical Fisher diagonal of
    each task at its optimum on top of the all-ones prior term.
    """
    if state.tasks_seen == 0:
        penalty = GaussianPrior()
    else:
        penalty = QuadraticPenalty(state.anchor, state.curvature, lam)
    theta = train(RecursiveLoss(penalty, nll), cfg, theta0)
    fisher = empirical_fisher_diagonal(nll, theta)
    new_state = PenaltyState(
        anchor=theta.copy(),
        curvature=state.curvature + fisher,
        tasks_seen=state.tasks_seen + 1,
    )
    return theta, new_state


def si_step(state, nll, lam, cfg, theta0):
    """One task of synaptic intelligence.

    The penalty for tasks after the first is ``lam * sum_k importance_k *
    (theta_k - anchor_k)^2``, carried by the shared quadratic penalty with
    a doubled diagonal.  During training the path integral of minus
    gradient times update accumulates; at the end it is damped by the
    squared task displacement and folded into the importance.
    """
    if state.tasks_seen == 0:
        penalty = GaussianPrior()
    else:
        penalty = QuadraticPenalty(state.anchor, 2.0 * state.importance, lam)
    path = state.path_accum.copy()

    def hook(step, before, gradient, after):
        nonlocal path
        path = path - gradient * (after - before)

    theta = train(RecursiveLoss(penalty, nll), cfg, theta0, hook=hook)
    displacement = theta - state.anchor
    gain = np.maximum(path, 0.0) / (displacement**2 + state.damping)
    new_state = SiState(
        importance=state.importance + gain,
        path_accum=np.zeros_like(path),
        anchor=theta.copy(),
        damping=state.damping,
        tasks_seen=state.tasks_seen + 1,
    )
    return theta, new_state


def neural_consolidation_step(state, nll, cfg, theta0, *, lr=1e-3, delta=1.0, seed=0, warm_start=False):
    """One task of neural consolidation.

    Trains on the surrogate penalty (the plain prior for the first task)
    plus the data term, then fits a surrogate to the current approximate
    loss, penalty included, on ball samples around the new optimum.  The
    data part of the target is evaluated in mini-batches and added.  The
    surrogate is freshly initialized per task unless ``warm_start``
    continues from the previous one.
    """
    if state.tasks_seen == 0 or state.phi is None:
        penalty = GaussianPrior()
    else:
        penalty = NeuralPenalty(state.spec, state.phi, state.lam)
    theta = train(RecursiveLoss(penalty, nll), cfg, theta0)

    def target_fn(pts):
        return penalty.value_many(pts) + _value_many_batched(nll, pts, cfg.batch_size)

    phi = fit_consolidator(
        target_fn,
        theta,
        state.spec,
        radius=state.radius,
        sample_size=state.sample_size,
        fit_steps=state.fit_steps,
        lr=lr,
        reg=state.reg,
        delta=delta,
        seed=seed,
        phi0=state.phi if warm_start else None,
    )
    new_state = ConsolidatorState(
        spec=state.spec,
        phi=phi,
        lam=state.lam,
        radius=state.radius,
        reg=state.reg,
        sample_size=state.sample_size,
        fit_steps=state.fit_steps,
        tasks_seen=state.tasks_seen + 1,
    )
    return theta, new_state


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


class ContinualClassifier(ClassifierMixin, BaseEstimator):
    """Shared mechanics: model setup, per-task training, prediction."""

    def __init__(
        self,
        hidden_sizes=(),
        head="categorical",
        epochs=100,
        batch_size=16,
        base_lr=0.1,
        beta_1=0.9,
        beta_2=0.999,
        epsilon=1e-8,
        random_state=0,
    ):
        self.hidden_sizes = hidden_sizes
        self.head = head
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.random_state = random_state

    # subclasses override these three
    def _init_state(self):
        pass

    def _fit_task(self, nll, cfg):
        raise NotImplementedError

    def _setup(self, X, classes):
        classes = np.unique(np.asarray(classes))
        if classes.size < 2:
            raise ValueError("need at least two classes")
        if self.head == "bernoulli" and not np.array_equal(classes, [0, 1]):
            raise ValueError("a bernoulli head requires classes [0, 1]")
        if self.head not in ("categorical", "bernoulli"):
            raise ValueError(f"unsupported head {self.head!r}")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        output_dim = 1 if self.head == "bernoulli" else classes.size
        self.spec_ = nn.ModelSpec(
            input_dim=X.shape[1],
            hidden_sizes=tuple(self.hidden_sizes),
            output_dim=output_dim,
            head=self.head,
        )
        self.weights_ = nn.init_params(self.spec_, self.random_state)
        self.task_count_ = 0
        self.history_ = []
        self._init_state()

    def _encode_labels(self, y):
        pos = np.searchsorted(self.classes_, y)
        pos = np.clip(pos, 0, self.classes_.size - 1)
        if not np.array_equal(self.classes_[pos], y):
            raise ValueError("y contains labels outside the declared classes")
        return pos.astype(np.int64)

    def _make_nll(self, X, y_idx):
        if self.head == "bernoulli":
            return BernoulliNLL(self.spec_, X, y_idx)
        return CategoricalNLL(self.spec_, X, y_idx)

    def _task_seed(self):
        # distinct shuffle stream per task, shared across methods for
        # comparable runs at equal random_state
        return int(self.random_state) + 7919 * (self.task_count_ + 1)

    def partial_fit(self, X, y, classes=None):
        """Train on one task and consolidate; the task's data is dropped after."""
        X, y = check_X_y(X, y, dtype=np.float64)
        if not hasattr(self, "classes_"):
            if classes is None:
                raise ValueError("classes must be provided on the first call to partial_fit")
            self._setup(X, classes)
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, this model was set up with {self.n_features_in_}"
            )
        nll = self._make_nll(X, self._encode_labels(y))
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            seed=self._task_seed(),
            adam_beta1=self.beta_1,
            adam_beta2=self.beta_2,
            adam_eps=self.epsilon,
        )
        self._fit_task(nll, cfg)
        self.history_.append(self.weights_.copy())
        self.task_count_ += 1
        return self

    def fit(self, X, y):
        """Reset and train on a single task; alias for a fresh partial_fit."""
        for attr in ("classes_", "weights_", "spec_", "task_count_", "history_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X, y, classes=np.unique(y))

    def predict_proba(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        probs = nn.predict_proba(self.spec_, self.weights_, X)
        if self.spec_.head == "bernoulli":
            probs = np.column_stack([1.0 - probs[:, 0], probs[:, 0]])
        return probs

    def predict(self, X):
        probs = self.predict_proba(X)
        if self.spec_.head == "bernoulli":
            idx = (probs[:, 1] >= 0.5).astype(np.int64)
        else:
            idx = np.argmax(probs, axis=1)
        return self.classes_[idx]


class FineTuneClassifier(ContinualClassifier):
    """Lower reference: every task trains on the prior plus its own data term."""

    def _fit_task(self, nll, cfg):
        loss = RecursiveLoss(GaussianPrior(), nll)
        self.weights_ = train(loss, cfg, self.weights_)


class JointClassifier(ContinualClassifier):
    """Upper reference: retains all data and trains on the exact joint loss.

    The summed data terms of the retained tasks equal one data term over
    the concatenated rows, which is how the joint objective is evaluated.
    """

    def _init_state(self):
        self.X_seen_ = np.empty((0, self.n_features_in_))
        self.y_seen_ = np.empty((0,), dtype=np.int64)

    def _fit_task(self, nll, cfg):
        self.X_seen_ = np.vstack([self.X_seen_, nll.X])
        self.y_seen_ = np.concatenate([self.y_seen_, nll.y])
        joint_nll = self._make_nll(self.X_seen_, self.y_seen_)
        loss = RecursiveLoss(GaussianPrior(), joint_nll)
        self.weights_ = train(loss, cfg, self.weights_)


class QuadraticConsolidationClassifier(ContinualClassifier):
    """Full quadratic penalty with exact accumulated task Hessians."""

    def __init__(
        self,
        lam=1.0,
        hidden_sizes=(),
        head="categorical",
        epochs=100,
        batch_size=16,
        base_lr=0.1,
        beta_1=0.9,
        beta_2=0.999,
        epsilon=1e-8,
        random_state=0,
    ):
        super().__init__(
            hidden_sizes=hidden_sizes,
            head=head,
            epochs=epochs,
            batch_size=batch_size,
            base_lr=base_lr,
            beta_1=beta_1,
            beta_2=beta_2,
            epsilon=epsilon,
            random_state=random_state,
        )
        self.lam = lam

    def _init_state(self):
        self.state_ = PenaltyState.initial(self.spec_.param_count)

    def _fit_task(self, nll, cfg):
        self.weights_, self.state_ = quadratic_consolidation_step(
            self.state_, nll, self.lam, cfg, self.weights_
        )


class EWCClassifier(ContinualClassifier):
    """Diagonal empirical Fisher penalty, accumulated across tasks."""

    def __init__(
        self,
        lam=1.0,
        hidden_sizes=(),
        head="categorical",
        epochs=100,
        batch_size=16,
        base_lr=0.1,
        beta_1=0.9,
        beta_2=0.999,
        epsilon=1e-8,
        random_state=0,
    ):
        super().__init__(
            hidden_sizes=hidden_sizes,
            head=head,
            epochs=epochs,
            batch_size=batch_size,
            base_lr=base_lr,
            beta_1=beta_1,
            beta_2=beta_2,
            epsilon=epsilon,
            random_state=random_state,
        )
        self.lam = lam

    def _init_state(self):
        self.state_ = PenaltyState.initial(self.spec_.param_count, diagonal=True)

    def _fit_task(self, nll, cfg):
        self.weights_, self.state_ = ewc_step(self.state_, nll, self.lam, cfg, self.weights_)


class SynapticIntelligenceClassifier(ContinualClassifier):
    """Path-integral importance penalty with damping."""

    def __init__(
        self,
        lam=1.0,
        damping=0.1,
        hidden_sizes=(),
        head="categorical",
        epochs=100,
        batch_size=16,
        base_lr=0.1,
        beta_1=0.9,
        beta_2=0.999,
        epsilon=1e-8,
        random_state=0,
    ):
        super().__init__(
            hidden_sizes=hidden_sizes,
            head=head,
            epochs=epochs,
            batch_size=batch_size,
            base_lr=base_lr,
            beta_1=beta_1,
            beta_2=beta_2,
            epsilon=epsilon,
            random_state=random_state,
        )
        self.lam = lam
        self.damping = damping

    def _init_state(self):
        self.state_ = SiState.initial(self.weights_, self.damping)

    def _fit_task(self, nll, cfg):
        self.weights_, self.state_ = si_step(self.state_, nll, self.lam, cfg, self.weights_)


class NeuralConsolidationClassifier(ContinualClassifier):
    """Surrogate-network penalty fit to the previous loss surface."""

    def __init__(
        self,
        lam=1.0,
        radius=10.0,
        consolidator_hidden=(256, 256),
        sample_size=64,
        fit_steps=1000,
        consolidator_lr=1e-3,
        consolidator_reg=0.1,
        huber_delta=1.0,
        warm_start_consolidator=False,
        hidden_sizes=(),
        head="categorical",
        epochs=100,
        batch_size=16,
        base_lr=0.1,
        beta_1=0.9,
        beta_2=0.999,
        epsilon=1e-8,
        random_state=0,
    ):
        super().__init__(
            hidden_sizes=hidden_sizes,
            head=head,
            epochs=epochs,
            batch_size=batch_size,
            base_lr=base_lr,
            beta_1=beta_1,
            beta_2=beta_2,
            epsilon=epsilon,
            random_state=random_state,
        )
        self.lam = lam
        self.radius = radius
        self.consolidator_hidden = consolidator_hidden
        self.sample_size = sample_size
        self.fit_steps = fit_steps
        self.consolidator_lr = consolidator_lr
        self.consolidator_reg = consolidator_reg
        self.huber_delta = huber_delta
        self.warm_start_consolidator = warm_start_consolidator

    def _init_state(self):
        surrogate = nn.ModelSpec(
            input_dim=self.spec_.param_count,
            hidden_sizes=tuple(self.consolidator_hidden),
            output_dim=1,
            head="scalar",
        )
        self.state_ = ConsolidatorState(
            spec=surrogate,
            phi=None,
            lam=self.lam,
            radius=self.radius,
            reg=self.consolidator_reg,
            sample_size=self.sample_size,
            fit_steps=self.fit_steps,
        )

    def _fit_task(self, nll, cfg):
        self.weights_, self.state_ = neural_consolidation_step(
            self.state_,
            nll,
            cfg,
            self.weights_,
            lr=self.consolidator_lr,
            delta=self.huber_delta,
            seed=self._task_seed() + 1,
            warm_start=self.warm_start_consolidator,
        )


METHOD_REGISTRY = {
    "finetune": FineTuneClassifier,
    "joint": JointClassifier,
    "quadratic": QuadraticConsolidationClassifier,
    "neural": NeuralConsolidationClassifier,
    "ewc": EWCClassifier,
    "si": SynapticIntelligenceClassifier,
}


def fit_sequence(estimator, seq):
    """Run an estimator through every task of a sequence, in order."""
    classes = np.arange(seq.n_classes)
    for triple in seq:
        estimator.partial_fit(triple.train.X, triple.train.y, classes=classes)
    return estimator
