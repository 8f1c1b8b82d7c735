"""Tests for parameter vectors, loss gradients, and the optimizer."""

import numpy as np
import jax.numpy as jnp
import pytest
from numpy.testing import assert_allclose

from copulaflow.errors import ConfigurationError, TrainingError
from copulaflow.gradients import (
    FitSettings,
    OptimizerState,
    ParamVector,
    fit_maximum_likelihood,
    optimizer_step,
    value_and_grad,
)


class TestParamVector:
    def test_from_blocks_round_trip(self):
        pv = ParamVector.from_blocks({"a": np.arange(3.0), "b": np.ones((2, 2))})
        assert pv.size == 7
        assert_allclose(pv.block("a"), [0, 1, 2])
        assert_allclose(pv.block("b"), np.ones(4))

    def test_layout_must_cover(self):
        with pytest.raises(ConfigurationError):
            ParamVector(np.zeros(5), {"a": slice(0, 3)})

    def test_layout_must_abut(self):
        with pytest.raises(ConfigurationError):
            ParamVector(np.zeros(5), {"a": slice(0, 2), "b": slice(3, 5)})


class TestValueAndGrad:
    def test_quadratic(self):
        pv = ParamVector.from_blocks({"p": np.array([1.0, -2.0])})
        val, grad = value_and_grad(lambda v, b: jnp.sum(v ** 2), pv, None)
        assert val == 5.0
        assert_allclose(grad, [2.0, -4.0])

    def test_nonfinite_loss_reports_batch(self):
        pv = ParamVector.from_blocks({"p": np.array([0.0])})
        with pytest.raises(TrainingError, match="batch index 3"):
            value_and_grad(lambda v, b: jnp.log(v[0]) * 0 + jnp.nan, pv, None,
                           batch_index=3)


class TestOptimizerStep:
    def test_zero_gradient_keeps_params(self):
        pv = ParamVector.from_blocks({"p": np.array([1.5, -0.5])})
        state = OptimizerState.zeros(2)
        new, state2 = optimizer_step(pv, np.zeros(2), state, 0.1)
        assert_allclose(new.values, pv.values)
        assert state2.step_count == 1

    def test_first_step_hand_computed(self):
        # from zero moments, step 1: m_hat = g, v_hat = g^2,
        # update = -lr * g / (|g| + eps)
        g = np.array([3.0, -1.0])
        lr = 0.01
        pv = ParamVector.from_blocks({"p": np.zeros(2)})
        new, _ = optimizer_step(pv, g, OptimizerState.zeros(2), lr)
        expected = -lr * g / (np.abs(g) + 1e-8)
        assert_allclose(new.values, expected, rtol=1e-12)
        assert np.all(np.sign(new.values) == -np.sign(g))

    def test_clipping_rescales_large_gradient(self):
        g = np.array([30.0, -40.0])  # norm 50 -> clipped to 5
        pv = ParamVector.from_blocks({"p": np.zeros(2)})
        new, _ = optimizer_step(pv, g, OptimizerState.zeros(2), 1.0)
        clipped = g * (5.0 / 50.0)
        expected = -clipped / (np.abs(clipped) + 1e-8)
        assert_allclose(new.values, expected, rtol=1e-12)

    def test_nonfinite_gradient_aborts(self):
        pv = ParamVector.from_blocks({"p": np.zeros(2)})
        with pytest.raises(TrainingError):
            optimizer_step(pv, np.array([np.nan, 0.0]),
                           OptimizerState.zeros(2), 0.1)

    def test_converges_on_convex_quadratic(self):
        # loss (p - a)^2 summed; analytic minimum at a with loss 0
        a = np.array([0.3, -0.2])
        pv = ParamVector.from_blocks({"p": np.array([0.5, 0.1])})
        state = OptimizerState.zeros(2)
        for _ in range(100):
            grad = 2.0 * (pv.values - a)
            pv, state = optimizer_step(pv, grad, state, 0.5)
        assert float(np.sum((pv.values - a) ** 2)) <= 1e-6


class TestFitLoop:
    @staticmethod
    def nll(values, batch):
        # negative log-likelihood of N(mu, exp(2*log_sigma))
        mu, log_sigma = values[0], values[1]
        z = (batch - mu) * jnp.exp(-log_sigma)
        return jnp.mean(0.5 * z ** 2 + log_sigma)

    def test_improves_and_returns_best(self):
        rng = np.random.default_rng(0)
        data = rng.normal(1.0, 2.0, size=600)
        pv = ParamVector.from_blocks({"theta": np.zeros(2)})
        settings = FitSettings(epochs=60, batch_size=64, learning_rate=0.05,
                               shuffle_seed=1)
        best, trace = fit_maximum_likelihood(self.nll, pv, data[:500],
                                             data[500:], settings)
        assert trace.val_nll[-1] >= trace.best_val - 1e-12
        assert trace.best_val <= trace.val_nll[0]
        assert abs(best.values[0] - 1.0) < 0.2
        assert abs(np.exp(best.values[1]) - 2.0) < 0.3

    def test_deterministic_trajectory(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=300)
        pv = ParamVector.from_blocks({"theta": np.zeros(2)})
        settings = FitSettings(epochs=10, batch_size=32, learning_rate=0.05,
                               shuffle_seed=7)
        r1 = fit_maximum_likelihood(self.nll, pv, data[:250], data[250:], settings)
        r2 = fit_maximum_likelihood(self.nll, pv, data[:250], data[250:], settings)
        assert r1[1].train_nll == r2[1].train_nll
        assert r1[1].val_nll == r2[1].val_nll
        assert np.array_equal(r1[0].values, r2[0].values)

    def test_marginal_nll_gradient_matches_fd(self):
        # composed spline loss: gradient vs central finite differences
        from copulaflow.splines import normalize_knots, inverse_map

        rng = np.random.default_rng(9)
        k = 6
        data = rng.uniform(-0.8, 1.8, size=64)

        def nll(values, batch):
            ku, ky, kd = normalize_knots(values[:k], values[k:2 * k],
                                         values[2 * k:])
            _, logd, _ = inverse_map(ku, ky, kd, -1.0, 2.0, batch)
            return -jnp.mean(logd)

        pv = ParamVector.from_blocks({"theta": 0.5 * rng.normal(size=3 * k + 1)})
        _, grad = value_and_grad(nll, pv, jnp.asarray(data))
        step = 1e-5
        fd = np.zeros_like(grad)
        for i in range(pv.size):
            up = pv.values.copy()
            up[i] += step
            dn = pv.values.copy()
            dn[i] -= step
            fd[i] = (float(nll(jnp.asarray(up), jnp.asarray(data)))
                     - float(nll(jnp.asarray(dn), jnp.asarray(data)))) / (2 * step)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() <= 1e-4
