"""Temporal module: LSTM encoder, single-head scaled dot-product attention,
and a chained-sequence decoder with a linear output head.

The decoder is a chain of n sequence passes: step one re-reads the attended
k-step sequence seeded with the encoder's final states, and every later step
re-reads the hidden sequence its predecessor produced, seeded with that
predecessor's final states. The head maps each step's final hidden state to
the two index components for that lead day. Trained steps own their
parameters, which is what makes horizon extension by copying meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ParameterError
from .tensor import (
    LstmWeights,
    Tensor,
    add,
    concat,
    lstm_cell,
    matmul,
    mul,
    narrow,
    reshape,
    softmax_lastdim,
    transpose_last2,
)


@dataclass(frozen=True)
class TaamConfig:
    k: int = 7
    n: int = 35
    hidden: int = 256
    tied_decoder: bool = False

    def __post_init__(self):
        if self.k < 1 or self.n < 1 or self.hidden < 1:
            raise ParameterError(
                f"k, n, hidden must be positive, got {self.k}, {self.n}, {self.hidden}"
            )

    @property
    def d_k(self) -> int:
        return self.hidden


class AttentionWeights:
    """Square query/key/value projections; caches the last weight matrix."""

    def __init__(self, wq: Tensor, wk: Tensor, wv: Tensor):
        self.wq = wq
        self.wk = wk
        self.wv = wv
        self.alpha = None  # attention weights from the most recent forward

    @classmethod
    def initialize(cls, hidden: int, rng: np.random.Generator) -> "AttentionWeights":
        bound = np.sqrt(1.0 / hidden)

        def mat():
            return Tensor(rng.uniform(-bound, bound, size=(hidden, hidden)), requires_grad=True)

        return cls(mat(), mat(), mat())

    def named(self, prefix: str = "taam/attn/") -> dict:
        return {f"{prefix}wq": self.wq, f"{prefix}wk": self.wk, f"{prefix}wv": self.wv}


def run_lstm_sequence(seq: Tensor, h0: Tensor, c0: Tensor, weights: LstmWeights):
    """Run the cells over a (B, k, D_in) sequence from the given states.

    Returns the stacked hidden sequence (B, k, hidden) and the final states.
    """
    steps = seq.shape[1]
    h, c = h0, c0
    rows = []
    for t in range(steps):
        x_t = reshape(narrow(seq, 1, t, 1), (seq.shape[0], seq.shape[2]))
        h, c = lstm_cell(x_t, h, c, weights)
        rows.append(reshape(h, (seq.shape[0], 1, weights.hidden)))
    return concat(rows, axis=1), h, c


def _lift_sequence(z: Tensor):
    if z.ndim == 2:
        return reshape(z, (1,) + z.shape), True
    if z.ndim == 3:
        return z, False
    raise DimensionError(f"expected (k, D) or (B, k, D) sequence, got {z.shape}")


def encode(z: Tensor, weights: LstmWeights):
    """Encode a feature sequence from zero states.

    Input is (k, D_in) or batched (B, k, D_in); returns the hidden sequence
    plus the final hidden and cell states.
    """
    z3, single = _lift_sequence(z)
    batch = z3.shape[0]
    zero_h = Tensor(np.zeros((batch, weights.hidden)))
    zero_c = Tensor(np.zeros((batch, weights.hidden)))
    hidden_seq, h, c = run_lstm_sequence(z3, zero_h, zero_c, weights)
    if single:
        d = weights.hidden
        return (
            reshape(hidden_seq, (z.shape[0], d)),
            reshape(h, (d,)),
            reshape(c, (d,)),
        )
    return hidden_seq, h, c


def attend(hidden_seq: Tensor, weights: AttentionWeights) -> Tensor:
    """Scaled dot-product attention over the encoded sequence.

    Each row of the weight matrix is a softmax, so rows sum to one; the
    output mixes the value rows by those weights. Shape is preserved.
    """
    seq, single = _lift_sequence(hidden_seq)
    d_k = weights.wq.shape[0]
    query = matmul(seq, weights.wq)
    key = matmul(seq, weights.wk)
    value = matmul(seq, weights.wv)
    scores = mul(matmul(query, transpose_last2(key)), Tensor(1.0 / np.sqrt(d_k)))
    alpha = softmax_lastdim(scores)
    weights.alpha = alpha.data[0].copy() if single else alpha.data.copy()
    mixed = matmul(alpha, value)
    if single:
        return reshape(mixed, hidden_seq.shape)
    return mixed


class DecoderStack:
    """Per-lead LSTM parameter sets plus the shared linear head.

    With tied weights a single parameter set serves every step; horizon
    extension then only raises the step count.
    """

    def __init__(self, steps, head_w: Tensor, head_b: Tensor, tied: bool, n_base: int, n_total=None):
        self.steps = steps
        self.head_w = head_w
        self.head_b = head_b
        self.tied = tied
        self.n_base = n_base
        self.n_total = n_total if n_total is not None else (n_base if tied else len(steps))
        if not tied and len(steps) != self.n_total:
            raise ConfigError(
                f"untied decoder with {len(steps)} parameter sets cannot emit "
                f"{self.n_total} leads"
            )

    @classmethod
    def initialize(cls, config: TaamConfig, rng: np.random.Generator) -> "DecoderStack":
        d = config.hidden
        count = 1 if config.tied_decoder else config.n
        steps = [LstmWeights.initialize(d, d, rng) for _ in range(count)]
        bound = np.sqrt(1.0 / d)
        head_w = Tensor(rng.uniform(-bound, bound, size=(d, 2)), requires_grad=True)
        head_b = Tensor(np.zeros(2), requires_grad=True)
        return cls(steps, head_w, head_b, config.tied_decoder, config.n)

    def step_weights(self, index: int) -> LstmWeights:
        return self.steps[0] if self.tied else self.steps[index]

    def named(self, prefix: str = "taam/decoder/") -> dict:
        params = {}
        for i, step in enumerate(self.steps):
            params[f"{prefix}step{i:03d}/w"] = step.w
            params[f"{prefix}step{i:03d}/b"] = step.b
        params[f"{prefix}head/w"] = self.head_w
        params[f"{prefix}head/b"] = self.head_b
        return params

    def copy(self) -> "DecoderStack":
        return DecoderStack(
            steps=[s.copy() for s in self.steps],
            head_w=Tensor(self.head_w.data.copy(), requires_grad=True),
            head_b=Tensor(self.head_b.data.copy(), requires_grad=True),
            tied=self.tied,
            n_base=self.n_base,
            n_total=self.n_total,
        )


def decode(attended: Tensor, h_k: Tensor, c_k: Tensor, stack: DecoderStack, n=None) -> Tensor:
    """Chain n sequence passes and head each step's final hidden state.

    Input is the attended sequence, (k, D) or (B, k, D), with matching
    encoder states; output is (n, 2) or (B, n, 2).
    """
    n = stack.n_total if n is None else n
    if n > stack.n_total:
        raise ConfigError(f"decoder has {stack.n_total} steps, cannot emit {n} leads")
    seq, single = _lift_sequence(attended)
    if single:
        h = reshape(h_k, (1, h_k.shape[-1]))
        c = reshape(c_k, (1, c_k.shape[-1]))
    else:
        h, c = h_k, c_k
    preds = []
    for i in range(n):
        seq, h, c = run_lstm_sequence(seq, h, c, stack.step_weights(i))
        y = add(matmul(h, stack.head_w), stack.head_b)
        preds.append(reshape(y, (y.shape[0], 1, 2)))
    out = concat(preds, axis=1)
    if single:
        return reshape(out, (n, 2))
    return out


def extend_horizon(stack: DecoderStack, extra: int) -> DecoderStack:
    """Append steps carrying bit-copies of the last step's parameters.

    The returned stack is independent of the input; predictions for the
    original leads are unchanged bit for bit.
    """
    if extra < 1:
        raise ParameterError(f"extension must add at least one step, got {extra}")
    extended = stack.copy()
    if stack.tied:
        extended.n_total = stack.n_total + extra
        return extended
    last = extended.steps[-1]
    extended.steps = extended.steps + [last.copy() for _ in range(extra)]
    extended.n_total = stack.n_total + extra
    return extended
