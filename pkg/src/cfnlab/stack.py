"""Layered word-level recurrent language model.

A stack is: token embedding -> L recurrent layers (all one cell kind,
all `hidden` units wide, embedding width equal to hidden) -> affine
projection to vocabulary logits.

Two dropout rates, applied with fixed masks for a whole unroll window
(inverted scaling, so evaluation needs no rescale):

  * between-rate masks sit between levels of the stack: one on the
    embedded input of layer 1, one on each layer's output as seen by
    the layer above, one on the top output as seen by the projection.
    They affect only the upward content path, never the recurrence.
  * gate-rate masks feed the gate pre-activations inside each layer:
    one on the recurrent state and one on the layer input. The content
    path through tanh(h) is never dropped, so the state carry itself
    stays intact.

`forward_window` is the batched training entry point and returns the
cache consumed by the analytic backward pass in `training`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from .cells import (
    CfnParams,
    GruParams,
    LstmParams,
    LstmState,
    cfn_core,
    gru_core,
    lstm_core,
)
from .errors import CheckpointError, ShapeError, ValidationError
from .numkit import Rng

KINDS = ("cfn", "lstm", "gru")

LayerParams = Union[CfnParams, LstmParams, GruParams]


@dataclass
class ModelStack:
    kind: str
    embedding: np.ndarray      # vocab x hidden
    layers: list
    W_out: np.ndarray          # vocab x hidden
    b_out: np.ndarray          # vocab

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown cell kind {self.kind!r}")
        if not self.layers:
            raise ValidationError("stack needs at least one layer")
        v, n = self.embedding.shape
        if self.W_out.shape != (v, n):
            raise ShapeError(
                f"W_out: expected {(v, n)}, got {self.W_out.shape}")
        if self.b_out.shape != (v,):
            raise ShapeError(f"b_out: expected {(v,)}, got {self.b_out.shape}")
        for i, layer in enumerate(self.layers):
            if layer.hidden != n or layer.input != n:
                raise ShapeError(
                    f"layer{i}: expected {n}x{n} cell, got "
                    f"{layer.hidden}x{layer.input}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def hidden(self) -> int:
        return self.embedding.shape[1]

    @property
    def vocab(self) -> int:
        return self.embedding.shape[0]

    def named_tensors(self) -> Iterator[tuple]:
        """All trainable tensors in a fixed order; arrays are the live
        objects, not copies."""
        yield "embedding", self.embedding
        for i, layer in enumerate(self.layers):
            for name, t in layer.tensors():
                yield f"layer{i}.{name}", t
        yield "W_out", self.W_out
        yield "b_out", self.b_out

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_tensors())


@dataclass
class StackState:
    """Per-layer recurrent state; arrays for cfn/gru, (h, c) for lstm."""

    layers: list


@dataclass
class DropMask:
    """Masks for one unroll window, already scaled by 1/keep."""

    between: list      # depth+1 arrays, batch x hidden
    gate_rec: list     # depth arrays, batch x hidden
    gate_in: list      # depth arrays, batch x hidden


def init_stack(kind: str, depth: int, hidden: int, vocab: int, rng: Rng,
               scale: float = 0.07) -> ModelStack:
    """Fresh stack with every weight uniform in [-scale, scale) and
    fixed bias offsets: CFN opens toward remembering (theta-bias 1,
    eta-bias -1), LSTM likewise (forget-bias 1, input-bias -1), GRU
    starts with a mostly closed update gate (z-bias -1).

    Biases consume no draws, so the stream of uniforms is exactly the
    weight tensors in named_tensors order.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown cell kind {kind!r}")
    if depth < 1 or hidden < 1 or vocab < 2:
        raise ValidationError(
            f"bad stack geometry depth={depth} hidden={hidden} vocab={vocab}")

    def mat(rows, cols):
        return rng.uniform(-scale, scale, rows * cols).reshape(rows, cols)

    n = hidden
    embedding = mat(vocab, n)
    layers = []
    for _ in range(depth):
        if kind == "cfn":
            layers.append(CfnParams(
                W=mat(n, n),
                U_theta=mat(n, n), V_theta=mat(n, n), b_theta=np.ones(n),
                U_eta=mat(n, n), V_eta=mat(n, n), b_eta=-np.ones(n),
            ))
        elif kind == "lstm":
            layers.append(LstmParams(
                W_i=mat(n, n), V_i=mat(n, n), b_i=-np.ones(n),
                W_f=mat(n, n), V_f=mat(n, n), b_f=np.ones(n),
                W_o=mat(n, n), V_o=mat(n, n), b_o=np.zeros(n),
                W_g=mat(n, n), V_g=mat(n, n), b_g=np.zeros(n),
            ))
        else:
            layers.append(GruParams(
                W_z=mat(n, n), V_z=mat(n, n), b_z=-np.ones(n),
                W_r=mat(n, n), V_r=mat(n, n), b_r=np.zeros(n),
                U=mat(n, n), V_u=mat(n, n),
            ))
    return ModelStack(kind=kind, embedding=embedding, layers=layers,
                      W_out=mat(vocab, n), b_out=np.zeros(vocab))


def zero_state(stack: ModelStack, batch: Optional[int] = None) -> StackState:
    """All-zero recurrent state, vector-shaped or batch x hidden."""
    shape = (stack.hidden,) if batch is None else (batch, stack.hidden)
    layers = []
    for _ in range(stack.depth):
        if stack.kind == "lstm":
            layers.append(LstmState(h=np.zeros(shape), c=np.zeros(shape)))
        else:
            layers.append(np.zeros(shape))
    return StackState(layers=layers)


def copy_state(state: StackState) -> StackState:
    layers = []
    for s in state.layers:
        if isinstance(s, LstmState):
            layers.append(LstmState(h=s.h.copy(), c=s.c.copy()))
        else:
            layers.append(s.copy())
    return StackState(layers=layers)


def make_masks(stack: ModelStack, rng: Rng, batch: int,
               between_rate: float, gate_rate: float) -> DropMask:
    """Inverted-dropout masks for one window; a zero rate yields ones.

    Draw order is fixed: the depth+1 between masks bottom-up, then per
    layer the recurrent gate mask followed by the input gate mask.
    """
    for name, rate in (("between_rate", between_rate),
                       ("gate_rate", gate_rate)):
        if not 0.0 <= rate < 1.0:
            raise ValidationError(f"{name} must lie in [0, 1), got {rate}")
    n = stack.hidden

    def draw(rate):
        if rate == 0.0:
            return np.ones((batch, n))
        keep = 1.0 - rate
        return rng.bernoulli(keep, batch * n).reshape(batch, n) / keep

    between = [draw(between_rate) for _ in range(stack.depth + 1)]
    gate_rec, gate_in = [], []
    for _ in range(stack.depth):
        gate_rec.append(draw(gate_rate))
        gate_in.append(draw(gate_rate))
    return DropMask(between=between, gate_rec=gate_rec, gate_in=gate_in)


def _step_layer(kind: str, p, s_prev, x_raw, mp_in, mq_rec, mq_in):
    """Advance one layer one step with masked routing.

    Returns (new_layer_state, h_out_raw, cache_tuple). x_raw is the raw
    output of the level below at this step; mp_in scales its content
    route, mq_in its gate route, mq_rec the recurrent gate route.
    """
    if kind == "cfn":
        h_prev = s_prev
        h_gate = h_prev if mq_rec is None else h_prev * mq_rec
        x_w = x_raw if mp_in is None else x_raw * mp_in
        x_gate = x_raw if mq_in is None else x_raw * mq_in
        h, theta, eta, u, w = cfn_core(p, h_prev, h_gate, x_w, x_gate)
        return h, h, (h_prev, x_raw, theta, eta, u, w)
    if kind == "lstm":
        h_prev, c_prev = s_prev.h, s_prev.c
        h_gate = h_prev if mq_rec is None else h_prev * mq_rec
        x_w = x_raw if mp_in is None else x_raw * mp_in
        x_gate = x_raw if mq_in is None else x_raw * mq_in
        h, c, i, f, o, g, tc = lstm_core(p, c_prev, h_prev, h_gate, x_w,
                                         x_gate)
        return LstmState(h=h, c=c), h, (h_prev, c_prev, x_raw, i, f, o, g, tc)
    h_prev = s_prev
    h_gate = h_prev if mq_rec is None else h_prev * mq_rec
    x_w = x_raw if mp_in is None else x_raw * mp_in
    x_gate = x_raw if mq_in is None else x_raw * mq_in
    h, z, r, m, rh = gru_core(p, h_prev, h_gate, x_w, x_gate)
    return h, h, (h_prev, x_raw, z, r, m, rh)


@dataclass
class WindowCache:
    """Everything the backward pass needs from one unroll window."""

    tokens: np.ndarray        # batch x steps, int
    embedded: np.ndarray      # batch x steps x hidden, pre-mask
    steps: list               # steps x depth cache tuples
    top: np.ndarray           # batch x steps x hidden, pre-mask
    logits: np.ndarray        # batch x steps x vocab
    masks: object             # DropMask, list of DropMask, or None


def _mask_at(masks, t):
    if masks is None:
        return None
    if isinstance(masks, list):
        return masks[t]
    return masks


def forward_window(stack: ModelStack, state: StackState, tokens: np.ndarray,
                   masks=None):
    """Run a batch of token windows through the stack.

    tokens is batch x steps (int). masks may be None (no dropout), one
    DropMask reused at every step, or a list of per-step DropMask.
    Returns (logits, cache, final_state); the incoming state is not
    mutated.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeError(f"tokens must be batch x steps, got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= stack.vocab:
        raise ValidationError("token id outside vocabulary")
    B, T = tokens.shape
    n = stack.hidden

    embedded = stack.embedding[tokens]          # B x T x n
    top = np.empty((B, T, n))
    logits = np.empty((B, T, stack.vocab))
    steps = []
    cur = list(state.layers)
    for t in range(T):
        mk = _mask_at(masks, t)
        x = embedded[:, t, :]
        per_layer = []
        for li, p in enumerate(stack.layers):
            mp_in = None if mk is None else mk.between[li]
            mq_rec = None if mk is None else mk.gate_rec[li]
            mq_in = None if mk is None else mk.gate_in[li]
            cur[li], x, cache = _step_layer(stack.kind, p, cur[li], x,
                                            mp_in, mq_rec, mq_in)
            per_layer.append(cache)
        steps.append(per_layer)
        top[:, t, :] = x
        h_out = x if mk is None else x * mk.between[stack.depth]
        logits[:, t, :] = h_out @ stack.W_out.T + stack.b_out
    cache = WindowCache(tokens=tokens, embedded=embedded, steps=steps,
                        top=top, logits=logits, masks=masks)
    return logits, cache, StackState(layers=cur)


def stack_forward(stack: ModelStack, state: StackState, token: int,
                  masks=None):
    """Single-token convenience wrapper: returns (logit vector, state)."""
    tokens = np.array([[int(token)]])
    logits, _, new_state = forward_window(stack, _lift(state), tokens, masks)
    return logits[0, 0], _lower(new_state)


def _lift(state: StackState) -> StackState:
    layers = []
    for s in state.layers:
        if isinstance(s, LstmState):
            layers.append(LstmState(h=s.h[None, :], c=s.c[None, :]))
        else:
            layers.append(s[None, :])
    return StackState(layers=layers)


def _lower(state: StackState) -> StackState:
    layers = []
    for s in state.layers:
        if isinstance(s, LstmState):
            layers.append(LstmState(h=s.h[0], c=s.c[0]))
        else:
            layers.append(s[0])
    return StackState(layers=layers)


_CKPT_MAGIC = "cfnlab-ckpt"
_CKPT_VERSION = "v1"


def _zero_stack(kind: str, depth: int, hidden: int, vocab: int) -> ModelStack:
    class _Zero:
        def uniform(self, lo, hi, count):
            return np.zeros(count)

    return init_stack(kind, depth, hidden, vocab, _Zero(), scale=0.0)


def save_checkpoint(stack: ModelStack, path: str) -> None:
    """Write the stack as a plain-text checkpoint.

    Layout: one header line `cfnlab-ckpt v1 <kind> <depth> <hidden>
    <vocab>`, then per tensor a `tensor <name> <rows> <cols>` line
    followed by rows of space-separated floats (%.17g, which round-trips
    float64 exactly); vectors are written as one row. LF line endings.
    """
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{_CKPT_MAGIC} {_CKPT_VERSION} {stack.kind} "
                 f"{stack.depth} {stack.hidden} {stack.vocab}\n")
        for name, t in stack.named_tensors():
            rows = t if t.ndim == 2 else t[None, :]
            fh.write(f"tensor {name} {rows.shape[0]} {rows.shape[1]}\n")
            for row in rows:
                fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


def load_checkpoint(path: str) -> ModelStack:
    """Inverse of save_checkpoint; raises CheckpointError on any
    malformed or mismatched content."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().split("\n")
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from e

    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise CheckpointError("unexpected end of checkpoint")
        line = lines[pos]
        pos += 1
        return line

    head = next_line().split()
    if len(head) != 6 or head[0] != _CKPT_MAGIC:
        raise CheckpointError("not a cfnlab checkpoint")
    if head[1] != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {head[1]!r}")
    kind = head[2]
    if kind not in KINDS:
        raise CheckpointError(f"unknown cell kind {kind!r}")
    try:
        depth, hidden, vocab = (int(x) for x in head[3:6])
    except ValueError as e:
        raise CheckpointError(f"bad header geometry: {e}") from e
    if depth < 1 or hidden < 1 or vocab < 2:
        raise CheckpointError("bad header geometry")

    stack = _zero_stack(kind, depth, hidden, vocab)
    for name, t in stack.named_tensors():
        header = next_line().split()
        if len(header) != 4 or header[0] != "tensor":
            raise CheckpointError(f"expected tensor header, got {header!r}")
        want_rows = t.shape[0] if t.ndim == 2 else 1
        want_cols = t.shape[-1]
        if header[1] != name:
            raise CheckpointError(
                f"expected tensor {name!r}, found {header[1]!r}")
        if (int(header[2]), int(header[3])) != (want_rows, want_cols):
            raise CheckpointError(
                f"tensor {name}: expected {want_rows}x{want_cols}, "
                f"found {header[2]}x{header[3]}")
        block = np.empty((want_rows, want_cols))
        for r in range(want_rows):
            parts = next_line().split()
            if len(parts) != want_cols:
                raise CheckpointError(
                    f"tensor {name} row {r}: expected {want_cols} values, "
                    f"found {len(parts)}")
            try:
                block[r] = [float(x) for x in parts]
            except ValueError as e:
                raise CheckpointError(
                    f"tensor {name} row {r}: {e}") from e
        t[...] = block if t.ndim == 2 else block[0]
    if any(line.strip() for line in lines[pos:]):
        raise CheckpointError("trailing content after last tensor")
    return stack
