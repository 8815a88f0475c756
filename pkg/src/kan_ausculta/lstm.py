"""Bidirectional LSTM encoder with exact backpropagation through time.

The production pipeline feeds the encoder length-1 sequences (one
aggregated feature vector per recording), but the implementation supports
general sequence lengths so the recurrence itself is testable.

Gate layout: the input, recurrent, and bias tensors stack the four gates
as contiguous blocks in the order (input, forget, cell, output), i.e. a
hidden size H yields stacked shapes (4H, d_in), (4H, H), (4H,). Per-gate
matrices are exposed as views via :meth:`LstmWeights.gate_block`.

Cell equations (the conventional LSTM):
    i, f, o = sigmoid(W x + U h + b)       (their gate blocks)
    g       = tanh(W x + U h + b)          (cell-candidate block)
    c       = f * c_prev + i * g
    h       = o * tanh(c)

The bidirectional encoder runs one direction over t = 1..L and the other
over t = L..1 from zero initial states and concatenates the two final
hidden states; inverted dropout is applied to the concatenated output in
training mode only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ShapeError

__all__ = [
    "GATE_ORDER",
    "LstmWeights",
    "BiLstm",
    "LstmGrads",
    "BiLstmGrads",
    "EncodeCache",
    "lstm_init",
    "bilstm_init",
    "lstm_cell_step",
    "bilstm_encode",
    "bilstm_backward",
]

GATE_ORDER = ("input", "forget", "cell", "output")


def _sigmoid(x):
    # branch on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmWeights:
    """Gate parameters for one direction; gates stacked along the first axis."""

    w_x: np.ndarray  # (4H, d_in)
    w_h: np.ndarray  # (4H, H)
    bias: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]

    def gate_block(self, tensor: str, gate: str) -> np.ndarray:
        """View of one gate's slice of ``w_x``, ``w_h``, or ``bias``."""
        h = self.hidden_size
        g = GATE_ORDER.index(gate)
        arr = {"w_x": self.w_x, "w_h": self.w_h, "bias": self.bias}[tensor]
        return arr[g * h : (g + 1) * h]


@dataclass
class BiLstm:
    forward: LstmWeights
    backward: LstmWeights
    dropout_rate: float = 0.3

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if (
            self.forward.hidden_size != self.backward.hidden_size
            or self.forward.input_size != self.backward.input_size
        ):
            raise ShapeError("forward/backward directions must share (d_in, H)")

    @property
    def hidden_size(self) -> int:
        return self.forward.hidden_size

    @property
    def input_size(self) -> int:
        return self.forward.input_size

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size


def lstm_init(d_in: int, hidden: int, rng: np.random.Generator) -> LstmWeights:
    """Uniform [-1/sqrt(H), 1/sqrt(H)] matrices; forget bias 1, others 0."""
    if d_in < 1 or hidden < 1:
        raise ValueError(f"dimensions must be positive, got ({d_in}, {hidden})")
    bound = 1.0 / np.sqrt(hidden)
    w_x = rng.uniform(-bound, bound, size=(4 * hidden, d_in))
    w_h = rng.uniform(-bound, bound, size=(4 * hidden, hidden))
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0  # forget gate block
    return LstmWeights(w_x=w_x, w_h=w_h, bias=bias)


def bilstm_init(
    d_in: int, hidden: int, dropout_rate: float, rng: np.random.Generator
) -> BiLstm:
    return BiLstm(
        forward=lstm_init(d_in, hidden, rng),
        backward=lstm_init(d_in, hidden, rng),
        dropout_rate=dropout_rate,
    )


def lstm_cell_step(w: LstmWeights, x_t, h_prev, c_prev):
    """One cell update; accepts single vectors or leading-batch arrays.

    Returns ``(h, c, cache)`` where the cache holds everything the
    backward pass needs for this step.
    """
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    h_size = w.hidden_size
    if x_t.shape[-1] != w.input_size:
        raise ShapeError(f"expected input width {w.input_size}, got {x_t.shape[-1]}")
    if h_prev.shape[-1] != h_size or c_prev.shape[-1] != h_size:
        raise ShapeError("state widths do not match the hidden size")

    a = x_t @ w.w_x.T + h_prev @ w.w_h.T + w.bias
    i = _sigmoid(a[..., :h_size])
    f = _sigmoid(a[..., h_size : 2 * h_size])
    g = np.tanh(a[..., 2 * h_size : 3 * h_size])
    o = _sigmoid(a[..., 3 * h_size :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    cache = (x_t, h_prev, c_prev, i, f, g, o, c)
    return h, c, cache


@dataclass
class EncodeCache:
    fwd_steps: list
    bwd_steps: list
    dropout_mask: np.ndarray | None
    seq_shape: tuple
    input_size: int
    hidden_size: int
    batched: bool


@dataclass
class LstmGrads:
    w_x: np.ndarray
    w_h: np.ndarray
    bias: np.ndarray


@dataclass
class BiLstmGrads:
    forward: LstmGrads
    backward: LstmGrads


def _run_direction(w: LstmWeights, seq: np.ndarray, reverse: bool):
    lead = seq.shape[:-2]
    h = np.zeros(lead + (w.hidden_size,))
    c = np.zeros_like(h)
    steps = []
    indices = range(seq.shape[-2])
    if reverse:
        indices = reversed(indices)
    for t in indices:
        h, c, cache = lstm_cell_step(w, seq[..., t, :], h, c)
        steps.append(cache)
    return h, steps


def bilstm_encode(
    m: BiLstm,
    seq,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Encode a sequence to concat(final forward state, final backward state).

    ``seq`` is (L, d_in) for one sample or (B, L, d_in) for a batch. The
    output has width 2H. In training mode an inverted-dropout mask
    (Bernoulli keep / (1 - p)) is applied to the output so that its
    expectation matches eval mode, which applies the identity.
    """
    seq = np.asarray(seq, dtype=float)
    if seq.ndim not in (2, 3):
        raise ShapeError(f"sequence must be (L, d) or (B, L, d), got shape {seq.shape}")
    if seq.shape[-2] < 1:
        raise ValueError("empty sequence")
    if seq.shape[-1] != m.input_size:
        raise ShapeError(f"expected input width {m.input_size}, got {seq.shape[-1]}")

    h_fwd, fwd_steps = _run_direction(m.forward, seq, reverse=False)
    h_bwd, bwd_steps = _run_direction(m.backward, seq, reverse=True)
    out = np.concatenate([h_fwd, h_bwd], axis=-1)

    mask = None
    if training and m.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode encode needs an rng for dropout")
        keep = 1.0 - m.dropout_rate
        mask = (rng.random(out.shape) < keep).astype(float) / keep
        out = out * mask

    cache = EncodeCache(
        fwd_steps=fwd_steps,
        bwd_steps=bwd_steps,
        dropout_mask=mask,
        seq_shape=seq.shape,
        input_size=m.input_size,
        hidden_size=m.hidden_size,
        batched=seq.ndim == 3,
    )
    return out, cache


def _bptt(w: LstmWeights, steps: list, dh_final):
    """Backprop one direction. Returns (grads, list of dx per step order)."""
    grads = LstmGrads(
        w_x=np.zeros_like(w.w_x), w_h=np.zeros_like(w.w_h), bias=np.zeros_like(w.bias)
    )
    dh = dh_final
    dc = np.zeros_like(dh_final)
    dxs = []
    for x_t, h_prev, c_prev, i, f, g, o, c in reversed(steps):
        tanh_c = np.tanh(c)
        da_o = dh * tanh_c * o * (1.0 - o)
        dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
        da_f = dc * c_prev * f * (1.0 - f)
        da_i = dc * g * i * (1.0 - i)
        da_g = dc * i * (1.0 - g * g)
        da = np.concatenate([da_i, da_f, da_g, da_o], axis=-1)
        da2 = da.reshape(-1, da.shape[-1])  # collapse batch axes for the reductions
        grads.w_x += da2.T @ x_t.reshape(-1, x_t.shape[-1])
        grads.w_h += da2.T @ h_prev.reshape(-1, h_prev.shape[-1])
        grads.bias += da2.sum(axis=0)
        dxs.append(da @ w.w_x)
        dh = da @ w.w_h
        dc = dc * f
    dxs.reverse()  # back to this direction's own step order
    return grads, dxs


def bilstm_backward(m: BiLstm, cache: EncodeCache, upstream):
    """Exact gradients of the encode output w.r.t. all parameters and the input.

    ``upstream`` must match the encode output shape (..., 2H). Returns
    ``(BiLstmGrads, grad_seq)`` with ``grad_seq`` shaped like the original
    sequence.
    """
    upstream = np.asarray(upstream, dtype=float)
    if cache.input_size != m.input_size or cache.hidden_size != m.hidden_size:
        raise ContractViolation("cache does not belong to this encoder")
    expected = cache.seq_shape[:-2] + (2 * m.hidden_size,)
    if upstream.shape != expected:
        raise ContractViolation(
            f"upstream shape {upstream.shape} does not match encode output {expected}"
        )

    if cache.dropout_mask is not None:
        upstream = upstream * cache.dropout_mask

    h = m.hidden_size
    fwd_grads, fwd_dxs = _bptt(m.forward, cache.fwd_steps, upstream[..., :h])
    bwd_grads, bwd_dxs = _bptt(m.backward, cache.bwd_steps, upstream[..., h:])

    grad_seq = np.zeros(cache.seq_shape)
    length = cache.seq_shape[-2]
    for t in range(length):
        grad_seq[..., t, :] += fwd_dxs[t]
        # the reversed direction's step s consumed original index L-1-s
        grad_seq[..., length - 1 - t, :] += bwd_dxs[t]
    return BiLstmGrads(forward=fwd_grads, backward=bwd_grads), grad_seq
