"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a contiguous row-major numpy array of 64-bit floats. While a
Tape is active, every operation whose inputs participate in gradient flow is
recorded on it; Tape.backward walks the records once, in reverse, and
accumulates gradients into the ``grad`` field of tensors created with
``requires_grad=True``.

Forward and backward on one tape are single-threaded. Tensors may be handed
between threads freely as long as no tape references them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

# Debug mode: validate that every op output is finite (NaN/Inf trap).
_CHECK_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Enable or disable NaN/Inf assertions on every op output."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """N-dimensional float64 array, optionally tracking a gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return mul(tensor_sum(self), _lift(1.0 / self.size))

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


class _TapeOp:
    """One recorded operation: output, inputs, and its backward rule."""

    __slots__ = ("out", "inputs", "backward", "visits")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.visits = 0


class Tape:
    """Ordered record of operations; replays them in reverse for gradients.

    Records are appended in execution order, so the list is topologically
    sorted by construction; the backward sweep visits each record exactly
    once.
    """

    _stack: list = []

    def __init__(self):
        self._ops: list[_TapeOp] = []
        self._live: set[int] = set()

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._stack.pop()
        return False

    @classmethod
    def active(cls):
        return cls._stack[-1] if cls._stack else None

    def __len__(self) -> int:
        return len(self._ops)

    def visit_counts(self) -> list:
        return [op.visits for op in self._ops]

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``grad`` of requires_grad tensors."""
        if loss.size != 1:
            raise DimensionError(
                f"backward seed must be a scalar, got shape {loss.shape}"
            )
        pending = {id(loss): np.ones_like(loss.data)}
        for op in reversed(self._ops):
            op.visits += 1
            grad_out = pending.pop(id(op.out), None)
            if grad_out is None:
                continue
            if op.out.requires_grad:
                op.out.grad = grad_out if op.out.grad is None else op.out.grad + grad_out
            grads_in = op.backward(grad_out)
            for parent, grad in zip(op.inputs, grads_in):
                if grad is None:
                    continue
                if parent.requires_grad:
                    parent.grad = grad if parent.grad is None else parent.grad + grad
                if id(parent) in self._live:
                    key = id(parent)
                    prev = pending.get(key)
                    pending[key] = grad if prev is None else prev + grad


def register_op(out: Tensor, inputs: tuple, backward) -> Tensor:
    """Record a custom op on the active tape when its inputs carry gradient.

    ``backward(grad_out)`` must return one gradient array (or None) per input.
    """
    if _CHECK_FINITE and not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite value produced by an operation")
    tape = Tape.active()
    if tape is None:
        return out
    live = tape._live
    if any(t.requires_grad or id(t) in live for t in inputs):
        tape._ops.append(_TapeOp(out, inputs, backward))
        live.add(id(out))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting expanded."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{name}: shapes {a.shape} and {b.shape} are not broadcast-compatible"
        ) from None


# -- elementwise suite -----------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return register_op(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return register_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return register_op(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def backward(g):
        return (g * (x.data > 0.0),)

    return register_op(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(1.0 / (1.0 + np.exp(-x.data)))

    def backward(g):
        y = out.data
        return (g * y * (1.0 - y),)

    return register_op(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))

    def backward(g):
        return (g * (1.0 - out.data * out.data),)

    return register_op(out, (x,), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last axis; rows sum to one and are shift-invariant."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))

    def backward(g):
        y = out.data
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return register_op(out, (x,), backward)


# -- structural ops --------------------------------------------------------

def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def backward(g):
        return (np.full(x.shape, float(g)),)

    return register_op(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        return (g.reshape(x.shape),)

    return register_op(out, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return register_op(out, (x,), backward)


def transpose_last2(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


def concat(tensors: list, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return register_op(out, tuple(tensors), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(np.ascontiguousarray(x.data[index]))

    def backward(g):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return register_op(out, (x,), backward)


# -- matrix product --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked (batched) operands multiply per-slice."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul requires at least 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    try:
        out = Tensor(a.data @ b.data)
    except ValueError:
        raise DimensionError(
            f"matmul batch dimensions disagree: {a.shape} x {b.shape}"
        ) from None

    def backward(g):
        ga = _unbroadcast(g @ _swap_last2(b.data), a.shape)
        gb = _unbroadcast(_swap_last2(a.data) @ g, b.shape)
        return ga, gb

    return register_op(out, (a, b), backward)


def _swap_last2(arr: np.ndarray) -> np.ndarray:
    return np.swapaxes(arr, -1, -2)


# -- convolution -----------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is (c_in, h, w) for one frame or (n, c_in, h, w) for a batch;
    ``kernel`` is (c_out, c_in, kh, kw) with odd kh, kw.
    """
    single = x.ndim == 3
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d expects (c,h,w) or (n,c,h,w) input and 4-D kernel, "
            f"got {x.shape} and {kernel.shape}"
        )
    c_out, c_in, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    xd = x.data[None] if single else x.data
    n, c, h, w = xd.shape
    if c != c_in:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}"
        )
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h + 2 * padding < kh or h_out < 1 or w_out < 1:
        raise DimensionError(
            f"conv2d output would be empty: input {x.shape}, kernel {kernel.shape}, "
            f"stride {stride}, padding {padding}"
        )

    def im2col(arr):
        padded = np.pad(arr, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        view = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        view = view[:, :, ::stride, ::stride]  # (n, c, h_out, w_out, kh, kw)
        cols = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5))
        return cols.reshape(n * h_out * w_out, c_in * kh * kw)

    cols = im2col(xd)
    w2 = kernel.data.reshape(c_out, -1).T
    prod = cols @ w2
    out_data = prod.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    out = Tensor(out_data[0] if single else out_data)

    def backward(g):
        g4 = g[None] if single else g
        g2 = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        dkernel = (im2col(xd).T @ g2).T.reshape(kernel.shape)
        dcols = (g2 @ w2.T).reshape(n, h_out, w_out, c_in, kh, kw)
        dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # (n, c, kh, kw, h_out, w_out)
        dxp = np.zeros((n, c_in, h + 2 * padding, w + 2 * padding))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += (
                    dcols[:, :, i, j]
                )
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
        return (dx[0] if single else dx), dkernel

    return register_op(out, (x, kernel), backward)


# -- LSTM cell ---------------------------------------------------------------

@dataclass
class LstmWeights:
    """Combined gate parameters of one LSTM cell.

    ``w`` has shape (hidden + input_dim, 4*hidden) and ``b`` shape (4*hidden,),
    multiplying the concatenation [h_prev, x]; gate order is forget, input,
    candidate, output.
    """

    w: Tensor
    b: Tensor
    input_dim: int
    hidden: int

    @classmethod
    def initialize(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "LstmWeights":
        fan_in = hidden + input_dim
        bound = np.sqrt(1.0 / fan_in)
        w = Tensor(rng.uniform(-bound, bound, size=(fan_in, 4 * hidden)), requires_grad=True)
        b_data = np.zeros(4 * hidden)
        b_data[:hidden] = 1.0  # forget-gate bias aids gradient flow early on
        b = Tensor(b_data, requires_grad=True)
        return cls(w=w, b=b, input_dim=input_dim, hidden=hidden)

    def copy(self) -> "LstmWeights":
        return LstmWeights(
            w=Tensor(self.w.data.copy(), requires_grad=True),
            b=Tensor(self.b.data.copy(), requires_grad=True),
            input_dim=self.input_dim,
            hidden=self.hidden,
        )


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, weights: LstmWeights):
    """One LSTM step; accepts a single vector or a batch of row vectors.

    Returns the new hidden state and cell state, both shaped like ``h_prev``.
    """
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, -1))
        h_prev = reshape(h_prev, (1, -1))
        c_prev = reshape(c_prev, (1, -1))
    d = weights.hidden
    if x.shape[-1] != weights.input_dim or h_prev.shape[-1] != d or c_prev.shape[-1] != d:
        raise DimensionError(
            f"lstm_cell shapes x={x.shape} h={h_prev.shape} c={c_prev.shape} "
            f"do not match weights (input_dim={weights.input_dim}, hidden={d})"
        )
    hx = concat([h_prev, x], axis=-1)
    z = add(matmul(hx, weights.w), weights.b)
    f = sigmoid(narrow(z, 1, 0, d))
    i = sigmoid(narrow(z, 1, d, d))
    g = tanh(narrow(z, 1, 2 * d, d))
    o = sigmoid(narrow(z, 1, 3 * d, d))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    if single:
        h = reshape(h, (d,))
        c = reshape(c, (d,))
    return h, c
