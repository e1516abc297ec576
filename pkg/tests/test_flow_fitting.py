"""
Tests for the toy flow refiner
"""

import numpy as np
import pytest

from tools.fields import FlowField
from tools.flow_fitting import fit_gaussian_flow
from utils.helper import ContractViolation


def test_symmetric_observations_keep_the_mean_and_learn_the_spread():
    base = np.zeros((4, 4, 2))
    base[..., 0] = 2.0
    d = 0.5
    offset = np.zeros((4, 4, 2))
    offset[..., 1] = d
    observations = [FlowField(base + offset), FlowField(base - offset)]
    fitted, history = fit_gaussian_flow(observations, steps=300, lr=0.5)

    assert np.allclose(fitted.mean.data, base, atol=1e-6)
    # stationary point of huber(d) / (2 var) + log var with huber(d) = d^2 / 2
    assert np.allclose(fitted.variance, d * d / 4.0, rtol=1e-4)
    assert history[-1] < history[0]
    assert len(history) == 301


def test_wider_spread_gets_larger_variance(rng):
    truth = np.zeros((6, 6, 2))
    std = np.full((6, 6), 0.1)
    std[:, 3:] = 0.6
    observations = [FlowField(truth + rng.normal(size=truth.shape) * std[..., None]) for _ in range(16)]
    fitted, _ = fit_gaussian_flow(observations, steps=200)
    assert fitted.variance[:, 3:].mean() > 4 * fitted.variance[:, :3].mean()


def test_zero_steps_returns_the_initialisation():
    obs = [FlowField.constant(2, 2, 1.0, 0.0), FlowField.constant(2, 2, 3.0, 0.0)]
    fitted, history = fit_gaussian_flow(obs, steps=0)
    assert np.allclose(fitted.mean.data, [2.0, 0.0])
    assert np.all(fitted.log_variance.data == 0.0)
    assert len(history) == 1


def test_fitting_is_deterministic(rng):
    obs = [FlowField(rng.normal(size=(3, 3, 2))) for _ in range(4)]
    a, ha = fit_gaussian_flow(obs, steps=20)
    b, hb = fit_gaussian_flow(obs, steps=20)
    assert np.array_equal(a.mean.data, b.mean.data)
    assert ha == hb


def test_resuming_from_a_fitted_flow_continues_the_same_descent(rng):
    obs = [FlowField(rng.normal(size=(3, 4, 2))) for _ in range(5)]
    full, full_history = fit_gaussian_flow(obs, steps=12, lr=0.3)
    half, first_history = fit_gaussian_flow(obs, steps=6, lr=0.3)
    resumed, second_history = fit_gaussian_flow(obs, steps=6, lr=0.3, init=half)
    assert np.array_equal(resumed.mean.data, full.mean.data)
    assert np.array_equal(resumed.log_variance.data, full.log_variance.data)
    assert first_history + second_history[1:] == full_history


def test_invalid_arguments():
    with pytest.raises(ContractViolation):
        fit_gaussian_flow([])
    with pytest.raises(ContractViolation):
        fit_gaussian_flow([FlowField.zeros(2, 2), FlowField.zeros(3, 2)])
    with pytest.raises(ContractViolation):
        fit_gaussian_flow([FlowField.zeros(2, 2)], lr=0.0)
