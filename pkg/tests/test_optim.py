"""Schedule shape, Adam mechanics, and the training loop contract."""

import numpy as np
import pytest

from clkit import autodiff as ad
from clkit.nn import ModelSpec
from clkit.objectives import CategoricalNLL, GaussianPrior, RecursiveLoss
from clkit.optim import (
    OptimizerState,
    TrainConfig,
    TrainingError,
    adam_step,
    one_cycle_lr,
    train,
)


class TestOneCycle:
    def test_starts_at_a_tenth_of_base(self):
        assert one_cycle_lr(0, 600, 0.1) == pytest.approx(0.01)

    def test_peak_at_thirty_percent(self):
        assert one_cycle_lr(180, 600, 0.1) == pytest.approx(0.1)

    def test_final_step_reaches_a_thousandth(self):
        final = one_cycle_lr(599, 600, 0.1)
        assert abs(final - 0.1 / 1000) <= 0.01 * (0.1 / 1000)

    def test_warmup_is_linear(self):
        lrs = [one_cycle_lr(s, 600, 1.0) for s in range(0, 181)]
        diffs = np.diff(lrs)
        np.testing.assert_allclose(diffs, diffs[0], rtol=1e-9)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            one_cycle_lr(0, 0, 0.1)
        with pytest.raises(ValueError):
            one_cycle_lr(10, 10, 0.1)


class TestAdam:
    def test_first_step_moves_by_lr_regardless_of_gradient_scale(self):
        # |step| = lr * g / (g + eps), so anything well above eps moves by lr
        for scale in (1e-3, 1.0, 1e6):
            state = OptimizerState.zeros(3)
            g = scale * np.array([1.0, -2.0, 0.5])
            _, theta = adam_step(state, np.zeros(3), g, lr=0.01)
            np.testing.assert_allclose(np.abs(theta), 0.01, rtol=1e-4)

    def test_zero_gradient_keeps_parameters_and_decays_moments(self):
        # with no first moment there is nothing to move; second moment decays
        state = OptimizerState(m=np.zeros(1), v=np.array([4.0]), step=3)
        theta = np.array([2.0])
        new_state, new_theta = adam_step(state, theta, np.zeros(1), lr=0.1)
        np.testing.assert_array_equal(new_theta, theta)
        assert new_state.m[0] == 0.0
        assert new_state.v[0] == pytest.approx(4.0 * 0.999)

    def test_scalar_quadratic_converges_under_one_cycle(self):
        theta = np.array([1.0])
        state = OptimizerState.zeros(1)
        path = [abs(theta[0])]
        for k in range(100):
            state, theta = adam_step(state, theta, 2.0 * theta, one_cycle_lr(k, 100, 0.1))
            path.append(abs(theta[0]))
        # overshoot transients die out; after them the magnitude only shrinks
        tail = path[61:]
        assert all(a >= b - 1e-15 for a, b in zip(tail, tail[1:]))
        assert path[-1] < 0.02


class _ExplodingTerm:
    """Artificial data term whose value overflows once theta grows."""

    name = "exploding"

    def __init__(self, n=8):
        self._n = n

    @property
    def n_rows(self):
        return self._n

    def restrict(self, idx):
        return _ExplodingTerm(len(idx))

    def __call__(self, theta):
        return ad.sum(ad.exp(400.0 * theta)) * self._n


class TestTrain:
    SPEC = ModelSpec(input_dim=4, hidden_sizes=(), output_dim=3)

    def _loss(self, seed=0, n=32):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 4))
        y = rng.integers(0, 3, size=n)
        return RecursiveLoss(GaussianPrior(), CategoricalNLL(self.SPEC, X, y))

    def test_zero_epochs_returns_theta0(self):
        theta0 = np.random.default_rng(0).normal(size=self.SPEC.param_count)
        out = train(self._loss(), TrainConfig(epochs=0), theta0)
        np.testing.assert_array_equal(out, theta0)
        assert out is not theta0

    def test_identical_seeds_are_bitwise_identical(self):
        theta0 = np.zeros(self.SPEC.param_count)
        cfg = TrainConfig(epochs=5, batch_size=8, base_lr=0.05, seed=123)
        a = train(self._loss(), cfg, theta0)
        b = train(self._loss(), cfg, theta0)
        np.testing.assert_array_equal(a, b)

    def test_different_seed_changes_trajectory(self):
        theta0 = np.zeros(self.SPEC.param_count)
        a = train(self._loss(), TrainConfig(epochs=5, batch_size=8, seed=1), theta0)
        b = train(self._loss(), TrainConfig(epochs=5, batch_size=8, seed=2), theta0)
        assert not np.array_equal(a, b)

    def test_converges_on_convex_objective(self, iris_sequence):
        # softmax regression on the first split-iris task; the classical
        # 100-epoch recipe lands near the optimum but its late-phase
        # learning rates leave a mini-batch noise floor around 0.16 in the
        # full gradient norm, so the tight bound is shown with the same
        # schedule run longer
        task = iris_sequence.tasks[0].train
        spec = ModelSpec(input_dim=4, hidden_sizes=(), output_dim=3)
        loss = RecursiveLoss(GaussianPrior(), CategoricalNLL(spec, task.X, task.y))

        theta = train(
            loss, TrainConfig(epochs=100, batch_size=16, base_lr=0.1, seed=0),
            np.zeros(spec.param_count),
        )
        _, g = ad.value_and_grad(loss.total, theta)
        assert np.linalg.norm(g) < 0.5

        theta = train(
            loss, TrainConfig(epochs=600, batch_size=16, base_lr=0.1, seed=0),
            np.zeros(spec.param_count),
        )
        _, g = ad.value_and_grad(loss.total, theta)
        assert np.linalg.norm(g) < 1e-2

    def test_matches_long_run_gradient_descent_value(self):
        # plain small-step gradient descent is the independent optimizer
        loss = self._loss(seed=3, n=24)
        cfg = TrainConfig(epochs=300, batch_size=24, base_lr=0.05, seed=0)
        theta_adam = train(loss, cfg, np.zeros(self.SPEC.param_count))

        theta = np.zeros(self.SPEC.param_count)
        for _ in range(20000):
            _, g = ad.value_and_grad(loss.total, theta)
            theta = theta - 0.01 * g
        value_gd = float(ad.detach(loss.total(theta)))
        value_adam = float(ad.detach(loss.total(theta_adam)))
        assert abs(value_adam - value_gd) < 1e-3

    def test_epoch_batches_cover_penalty_exactly(self):
        # ceil(20 / 6) = 4 mini-batches, last one short
        loss = self._loss(seed=5, n=20)
        theta = np.random.default_rng(2).normal(size=self.SPEC.param_count)
        train(loss, TrainConfig(epochs=1, batch_size=6), np.zeros(self.SPEC.param_count))
        assert loss.minibatch_count == 4
        total = 0.0
        for start in (0, 6, 12, 18):
            idx = np.arange(start, min(start + 6, 20))
            total += float(ad.detach(loss.batch_objective(idx)(theta)))
        assert abs(total - float(ad.detach(loss.total(theta)))) < 1e-8

    def test_nonfinite_loss_raises_with_step_index(self):
        loss = RecursiveLoss(GaussianPrior(), _ExplodingTerm())
        cfg = TrainConfig(epochs=50, batch_size=4, base_lr=5.0, seed=0)
        with np.errstate(all="ignore"), pytest.raises(TrainingError) as info:
            train(loss, cfg, np.full(3, 2.0))  # exp(800) overflows immediately
        assert info.value.step >= 0

    def test_hook_sees_every_update(self):
        loss = self._loss(seed=1, n=16)
        seen = []

        def hook(step, before, gradient, after):
            seen.append((step, before.copy(), after.copy()))

        train(loss, TrainConfig(epochs=2, batch_size=8), np.zeros(self.SPEC.param_count), hook=hook)
        assert [s for s, _, _ in seen] == list(range(4))
        assert all(not np.array_equal(b, a) for _, b, a in seen)


class TestTrainConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(base_lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(adam_beta1=1.0)
