"""Adam optimizer with bias correction and coupled L2 weight decay."""

from __future__ import annotations

import numpy as np

from .errors import TrainingError
from .tensor import Tensor


class AdamState:
    """Per-parameter moment estimates plus the shared step counter.

    Weight decay is coupled: it is added to the gradient before the moment
    updates, matching the classic formulation.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float = 1e-4,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m = {name: np.zeros(p.shape) for name, p in params.items()}
        self._v = {name: np.zeros(p.shape) for name, p in params.items()}


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """Apply one Adam update in place, reading gradients from ``p.grad``.

    Parameters with ``grad is None`` are treated as having zero gradient
    (weight decay still applies).
    """
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros(p.shape)
        if not np.isfinite(grad).all():
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
        if state.weight_decay:
            grad = grad + state.weight_decay * p.data
        m = state._m[name]
        v = state._v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
