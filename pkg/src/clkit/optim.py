"""Mini-batch Adam training of a recursive loss under a one-cycle schedule.

The schedule shape is fixed so runs are reproducible: linear warmup from
a tenth of the base rate up to the base rate over the first 30% of steps,
then cosine decay down to a thousandth of the base rate at the last step.

Shuffling draws a fresh seeded permutation every epoch and keeps the
short final batch.  The penalty part of the objective is divided by the
number of mini-batches, so summing the per-batch objectives over one
epoch recovers the full objective.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import EvaluationError, value_and_grad


class TrainingError(RuntimeError):
    """Training hit a non-finite objective; carries the failing step index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    base_lr: float = 0.1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")


WARMUP_FRACTION = 0.3
START_DIV = 10.0
FINAL_DIV = 1000.0


def one_cycle_lr(step, total_steps, base_lr):
    """Learning rate for one global step of a run with total_steps steps."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warm = WARMUP_FRACTION * total_steps
    if step <= warm:
        frac = step / warm if warm > 0 else 1.0
        return base_lr / START_DIV + (base_lr - base_lr / START_DIV) * frac
    end = base_lr / FINAL_DIV
    span = (total_steps - 1) - warm
    frac = (step - warm) / span if span > 0 else 1.0
    return end + (base_lr - end) * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, dim):
        return cls(m=np.zeros(dim), v=np.zeros(dim), step=0)


def adam_step(state, theta, gradient, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns the new state and parameters."""
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * gradient
    v = beta2 * state.v + (1.0 - beta2) * gradient * gradient
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta_new = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return OptimizerState(m=m, v=v, step=t), theta_new


def train(loss, cfg, theta0, hook=None):
    """Run epochs of shuffled mini-batch Adam on a RecursiveLoss.

    ``hook``, when given, is called after every update as
    ``hook(step, theta_before, gradient, theta_after)``; importance
    accumulators use it to watch the optimization path.
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    if cfg.epochs == 0:
        return theta
    n = loss.nll.n_rows
    if n < 1:
        raise ValueError("training data is empty")
    n_batches = math.ceil(n / cfg.batch_size)
    loss.minibatch_count = n_batches
    total_steps = cfg.epochs * n_batches
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState.zeros(theta.shape[0])
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            objective = loss.batch_objective(idx)
            try:
                value, g = value_and_grad(objective, theta)
            except EvaluationError as err:
                raise TrainingError(f"step {step}: {err}", step) from err
            if not math.isfinite(value):
                raise TrainingError(f"step {step}: non-finite loss", step)
            lr = one_cycle_lr(step, total_steps, cfg.base_lr)
            before = theta
            state, theta = adam_step(
                state, theta, g, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
            )
            if hook is not None:
                hook(step, before, g, theta)
            step += 1
    return theta
