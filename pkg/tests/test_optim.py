"""Adam update rules against hand-evaluated recurrences."""

import numpy as np
import pytest

from dkstn.errors import TrainingError
from dkstn.optim import AdamState, adam_step, zero_grads
from dkstn.tensor import Tensor


def test_zero_gradients_leave_parameters_unchanged():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    p.grad = np.zeros(3)
    params = {"p": p}
    state = AdamState(params, learning_rate=0.1, weight_decay=0.0)
    before = p.data.copy()
    adam_step(params, state)
    assert np.array_equal(p.data, before)
    assert state.step_count == 1


def test_constant_gradient_first_step_moves_by_learning_rate():
    # m_hat = v_hat = 1 after one step with g = 1, so the update is
    # -lr / (1 + eps).
    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad = np.array([1.0])
    params = {"p": p}
    state = AdamState(params, learning_rate=0.1)
    adam_step(params, state)
    expected = -0.1 / (1.0 + 1e-8)
    assert abs(p.data[0] - expected) < 1e-15
    assert abs(p.data[0] + 0.1) < 1e-8


def test_weight_decay_pulls_parameter_toward_zero():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([0.0])
    params = {"p": p}
    state = AdamState(params, learning_rate=0.01, weight_decay=0.001)
    adam_step(params, state)
    # effective gradient 0.001 gives a bias-corrected unit direction
    assert p.data[0] < 1.0
    assert abs((1.0 - p.data[0]) - 0.01) < 1e-6


def test_nonfinite_gradient_names_parameter():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([np.nan])
    params = {"deep/layer/weight": p}
    state = AdamState(params)
    with pytest.raises(TrainingError, match="deep/layer/weight"):
        adam_step(params, state)


def test_hand_evaluated_two_steps():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    p = Tensor(np.array([2.0]), requires_grad=True)
    params = {"p": p}
    state = AdamState(params, learning_rate=lr)
    # independent recurrence evaluation
    theta, m, v = 2.0, 0.0, 0.0
    for t, g in zip((1, 2), (0.3, -0.7)):
        p.grad = np.array([g])
        adam_step(params, state)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
        assert abs(p.data[0] - theta) < 1e-14


def test_zero_grads_clears():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.ones(2)
    zero_grads({"p": p})
    assert p.grad is None
