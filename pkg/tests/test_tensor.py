"""Tensor ops: forward values against hand oracles, gradients against
central finite differences, and tape bookkeeping."""

import numpy as np
import pytest

from dkstn.errors import DimensionError
from dkstn.tensor import (
    LstmWeights,
    Tape,
    Tensor,
    add,
    concat,
    conv2d,
    lstm_cell,
    matmul,
    mul,
    narrow,
    relu,
    set_debug_checks,
    sigmoid,
    softmax_lastdim,
    tanh,
    transpose,
)

from helpers import check_gradients, rand_tensor


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, b).data, b.data)


def test_matmul_projector():
    p = Tensor([[1.0, 0.0], [0.0, 0.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(matmul(p, b).data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError) as err:
        matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))
    assert "(3, 4)" in str(err.value) and "(3, 2)" in str(err.value)


@pytest.mark.parametrize("seed", range(20))
def test_matmul_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rand_tensor(rng, (3, 4))
    b = rand_tensor(rng, (4, 2))
    err = check_gradients(lambda: matmul(a, b).sum(), {"a": a, "b": b})
    assert err < 1e-6


def test_matmul_batched_matches_loop():
    rng = np.random.default_rng(7)
    a = rand_tensor(rng, (5, 3, 4))
    b = rand_tensor(rng, (5, 4, 2))
    out = matmul(a, b).data
    for i in range(5):
        assert np.allclose(out[i], a.data[i] @ b.data[i], atol=1e-14)
    err = check_gradients(lambda: matmul(a, b).sum(), {"a": a, "b": b})
    assert err < 1e-6


def test_elementwise_trivia():
    assert np.allclose(softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)
    assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert sigmoid(Tensor(0.0)).item() == 0.5
    assert tanh(Tensor(0.0)).item() == 0.0


def test_broadcast_error():
    with pytest.raises(DimensionError):
        add(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3,))))


def test_broadcast_backward_sums_expanded_axes():
    rng = np.random.default_rng(0)
    a = rand_tensor(rng, (4, 3))
    b = rand_tensor(rng, (3,))
    err = check_gradients(lambda: mul(add(a, b), a).sum(), {"a": a, "b": b})
    assert err < 1e-6


def test_softmax_rows_sum_to_one_and_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 9))
    y = softmax_lastdim(Tensor(x)).data
    assert np.all(np.abs(y.sum(axis=-1) - 1.0) < 1e-9)
    y_shifted = softmax_lastdim(Tensor(x + 123.456)).data
    assert np.max(np.abs(y - y_shifted)) < 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_elementwise_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rand_tensor(rng, (4, 5))
    # keep relu inputs away from its kink
    x.data[np.abs(x.data) < 0.05] += 0.1
    y = rand_tensor(rng, (4, 5))

    def forward():
        z = add(mul(sigmoid(x), tanh(y)), relu(x))
        return mul(softmax_lastdim(z), y).sum()

    assert check_gradients(forward, {"x": x, "y": y}) < 1e-4


def test_conv2d_scaling_kernel():
    x = Tensor(np.ones((1, 3, 3)))
    kernel = Tensor(np.full((1, 1, 1, 1), 2.0))
    out = conv2d(x, kernel, stride=1, padding=0)
    assert np.array_equal(out.data, np.full((1, 3, 3), 2.0))


def test_conv2d_averaging_kernel():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((1, 3, 3)))
    kernel = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0))
    out = conv2d(x, kernel, stride=1, padding=0)
    assert out.data.shape == (1, 1, 1)
    assert abs(out.data[0, 0, 0] - x.data.mean()) < 1e-12


def test_conv2d_output_geometry():
    x = Tensor(np.zeros((1, 5, 7)))
    kernel = Tensor(np.zeros((2, 1, 3, 3)))
    assert conv2d(x, kernel, stride=2, padding=1).data.shape == (2, 3, 4)


def test_conv2d_errors():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), 1, 0)
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 5, 5))), Tensor(np.zeros((1, 1, 2, 2))), 1, 0)
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))), 1, 1)


@pytest.mark.parametrize("seed", range(20))
def test_conv2d_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rand_tensor(rng, (2, 5, 5))
    kernel = rand_tensor(rng, (3, 2, 3, 3))
    weight = Tensor(rng.standard_normal((3, 5, 5)))

    def forward():
        return mul(conv2d(x, kernel, stride=1, padding=1), weight).sum()

    assert check_gradients(forward, {"x": x, "kernel": kernel}) < 1e-6


def test_conv2d_gradients_strided_batch():
    rng = np.random.default_rng(99)
    x = rand_tensor(rng, (2, 2, 6, 7))
    kernel = rand_tensor(rng, (3, 2, 3, 3))

    def forward():
        return conv2d(x, kernel, stride=2, padding=1).sum()

    assert check_gradients(forward, {"x": x, "kernel": kernel}) < 1e-6


def _zero_lstm(d_in, d):
    return LstmWeights(
        w=Tensor(np.zeros((d + d_in, 4 * d)), requires_grad=True),
        b=Tensor(np.zeros(4 * d), requires_grad=True),
        input_dim=d_in,
        hidden=d,
    )


def test_lstm_cell_all_zero_weights():
    weights = _zero_lstm(3, 4)
    x = Tensor(np.array([1.0, -2.0, 3.0]))
    h, c = lstm_cell(x, Tensor(np.zeros(4)), Tensor(np.zeros(4)), weights)
    assert np.array_equal(h.data, np.zeros(4))
    assert np.array_equal(c.data, np.zeros(4))


def test_lstm_cell_forget_gate_bias_keeps_cell():
    # zero input and hidden state, forget bias +10, other biases zero:
    # c = sigmoid(10) * c_prev + sigmoid(0) * tanh(0) = sigmoid(10) * c_prev
    d = 3
    weights = _zero_lstm(2, d)
    weights.b.data[:d] = 10.0
    v = np.array([0.5, -1.5, 2.0])
    h, c = lstm_cell(Tensor(np.zeros(2)), Tensor(np.zeros(d)), Tensor(v), weights)
    sig10 = 1.0 / (1.0 + np.exp(-10.0))
    assert np.allclose(c.data, sig10 * v, rtol=0, atol=1e-12)
    assert np.allclose(c.data, v, rtol=1e-4)
    # h = sigmoid(0) * tanh(c)
    assert np.allclose(h.data, 0.5 * np.tanh(sig10 * v), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_lstm_cell_gradients(seed):
    rng = np.random.default_rng(seed)
    d_in, d = 3, 4
    weights = LstmWeights.initialize(d_in, d, rng)
    x = rand_tensor(rng, (d_in,))
    h_prev = rand_tensor(rng, (d,))
    c_prev = rand_tensor(rng, (d,))

    def forward():
        h, c = lstm_cell(x, h_prev, c_prev, weights)
        return add(h.sum(), mul(c, c).sum())

    tensors = {"w": weights.w, "b": weights.b, "x": x, "h": h_prev, "c": c_prev}
    assert check_gradients(forward, tensors) < 1e-5


def test_lstm_cell_shape_error():
    weights = _zero_lstm(3, 4)
    with pytest.raises(DimensionError):
        lstm_cell(Tensor(np.zeros(5)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), weights)


def test_structural_op_gradients():
    rng = np.random.default_rng(11)
    a = rand_tensor(rng, (3, 4))
    b = rand_tensor(rng, (3, 2))

    def forward():
        joined = concat([a, b], axis=1)
        piece = narrow(joined, 1, 2, 3)
        flipped = transpose(piece, (1, 0))
        return mul(flipped, flipped).sum()

    assert check_gradients(forward, {"a": a, "b": b}) < 1e-6


def test_tape_visits_each_op_exactly_once():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = mul(add(x, x), x)
        z = add(y, x)  # reuses x three times
        loss = z.sum()
    tape.backward(loss)
    assert len(tape) > 0
    assert tape.visit_counts() == [1] * len(tape)
    # d/dx (2x^2 + x) = 4x + 1
    assert np.allclose(x.grad, 4.0 * x.data + 1.0, atol=1e-12)


def test_forward_backward_bit_determinism():
    def run():
        rng = np.random.default_rng(123)
        a = rand_tensor(rng, (4, 4))
        b = rand_tensor(rng, (4, 4))
        with Tape() as tape:
            loss = mul(softmax_lastdim(matmul(a, b)), a).sum()
        tape.backward(loss)
        return loss.item(), a.grad.copy(), b.grad.copy()

    first = run()
    second = run()
    assert first[0] == second[0]
    assert np.array_equal(first[1], second[1])
    assert np.array_equal(first[2], second[2])


def test_debug_mode_traps_nonfinite():
    set_debug_checks(True)
    try:
        with pytest.raises(FloatingPointError):
            mul(Tensor(np.array([1e308])), Tensor(np.array([1e308])))
    finally:
        set_debug_checks(False)


def test_no_tape_means_no_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    y = add(x, x)
    assert y.grad is None
    with Tape() as tape:
        add(Tensor(np.ones(3)), Tensor(np.ones(3)))  # no grad flow anywhere
    assert len(tape) == 0
