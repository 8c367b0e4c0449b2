"""Shared test oracles, independent of the library's backward pass."""

import numpy as np

from dkstn.tensor import Tape, Tensor


def finite_difference(forward_value, tensors, h=1e-5):
    """Central-difference gradients of a scalar function of the tensors.

    ``forward_value`` must recompute the scalar from the tensors' current
    data; entries are perturbed in place one at a time.
    """
    grads = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        grad = np.zeros(flat.size)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = forward_value()
            flat[idx] = orig - h
            f_minus = forward_value()
            flat[idx] = orig
            grad[idx] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = grad.reshape(t.data.shape)
    return grads


def analytic_gradients(forward_tensor, tensors):
    """Gradients from one recorded forward/backward pass."""
    for t in tensors.values():
        t.grad = None
    with Tape() as tape:
        loss = forward_tensor()
    tape.backward(loss)
    return {
        name: (t.grad.copy() if t.grad is not None else np.zeros(t.data.shape))
        for name, t in tensors.items()
    }


def max_relative_error(analytic, numeric):
    """Worst elementwise relative error, floored against vanishing entries."""
    worst = 0.0
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1.0)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6 * scale)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check_gradients(forward_tensor, tensors, h=1e-5):
    """Max relative error between recorded and finite-difference gradients."""
    analytic = analytic_gradients(forward_tensor, tensors)
    numeric = finite_difference(lambda: forward_tensor().item(), tensors, h=h)
    return max_relative_error(analytic, numeric)


def rand_tensor(rng, shape, requires_grad=True, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=requires_grad)
