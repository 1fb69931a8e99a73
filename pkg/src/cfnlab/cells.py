"""Single-step forward recurrences for the three gated cells.

The chaos-free cell (CFN) is
    h' = theta * tanh(h) + eta * tanh(W x)
    theta = sigmoid(U_theta h + V_theta x + b_theta)     (forget/horizontal gate)
    eta   = sigmoid(U_eta   h + V_eta   x + b_eta)       (input/vertical gate)

LSTM and GRU are the usual formulations, with explicit input matrices
V_* so that zeroing the input recovers each cell's autonomous map.

Every step is a pure function of (params, previous state, input) and is
batch-agnostic: states and inputs may be shaped (H,) or (B, H). The
*_core variants accept the recurrent state and layer input twice (once
for the gate pre-activations, once for the content path) so the layered
model can route differently masked copies through one implementation.
Addition order inside each pre-activation is fixed, so identical inputs
give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numkit import Rng, sigmoid


def _check_2d(name: str, a: np.ndarray, rows: int, cols: int) -> None:
    if a.shape != (rows, cols):
        raise ShapeError(f"{name}: expected shape {(rows, cols)}, got {a.shape}")


def _check_1d(name: str, a: np.ndarray, n: int) -> None:
    if a.shape != (n,):
        raise ShapeError(f"{name}: expected shape {(n,)}, got {a.shape}")


@dataclass
class CfnParams:
    """Weights of one CFN layer; recurrent matrices are hidden x hidden,
    input-facing matrices hidden x input."""

    W: np.ndarray
    U_theta: np.ndarray
    V_theta: np.ndarray
    b_theta: np.ndarray
    U_eta: np.ndarray
    V_eta: np.ndarray
    b_eta: np.ndarray

    def __post_init__(self):
        h, d = self.W.shape
        _check_2d("U_theta", self.U_theta, h, h)
        _check_2d("V_theta", self.V_theta, h, d)
        _check_1d("b_theta", self.b_theta, h)
        _check_2d("U_eta", self.U_eta, h, h)
        _check_2d("V_eta", self.V_eta, h, d)
        _check_1d("b_eta", self.b_eta, h)

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def input(self) -> int:
        return self.W.shape[1]

    def tensors(self):
        yield "W", self.W
        yield "U_theta", self.U_theta
        yield "V_theta", self.V_theta
        yield "b_theta", self.b_theta
        yield "U_eta", self.U_eta
        yield "V_eta", self.V_eta
        yield "b_eta", self.b_eta


@dataclass
class LstmParams:
    W_i: np.ndarray
    V_i: np.ndarray
    b_i: np.ndarray
    W_f: np.ndarray
    V_f: np.ndarray
    b_f: np.ndarray
    W_o: np.ndarray
    V_o: np.ndarray
    b_o: np.ndarray
    W_g: np.ndarray
    V_g: np.ndarray
    b_g: np.ndarray

    def __post_init__(self):
        h, d = self.V_i.shape
        for name in ("W_i", "W_f", "W_o", "W_g"):
            _check_2d(name, getattr(self, name), h, h)
        for name in ("V_i", "V_f", "V_o", "V_g"):
            _check_2d(name, getattr(self, name), h, d)
        for name in ("b_i", "b_f", "b_o", "b_g"):
            _check_1d(name, getattr(self, name), h)

    @property
    def hidden(self) -> int:
        return self.W_i.shape[0]

    @property
    def input(self) -> int:
        return self.V_i.shape[1]

    def tensors(self):
        for name in ("W_i", "V_i", "b_i", "W_f", "V_f", "b_f",
                     "W_o", "V_o", "b_o", "W_g", "V_g", "b_g"):
            yield name, getattr(self, name)


@dataclass
class GruParams:
    """z is the update gate, r the reset gate; the candidate path
    tanh(U (r*h) + V_u x) carries no bias."""

    W_z: np.ndarray
    V_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    V_r: np.ndarray
    b_r: np.ndarray
    U: np.ndarray
    V_u: np.ndarray

    def __post_init__(self):
        h, d = self.V_z.shape
        for name in ("W_z", "W_r", "U"):
            _check_2d(name, getattr(self, name), h, h)
        for name in ("V_z", "V_r", "V_u"):
            _check_2d(name, getattr(self, name), h, d)
        _check_1d("b_z", self.b_z, h)
        _check_1d("b_r", self.b_r, h)

    @property
    def hidden(self) -> int:
        return self.W_z.shape[0]

    @property
    def input(self) -> int:
        return self.V_z.shape[1]

    def tensors(self):
        for name in ("W_z", "V_z", "b_z", "W_r", "V_r", "b_r", "U", "V_u"):
            yield name, getattr(self, name)


@dataclass
class GateTrace:
    """Gate values recorded at one step; every component lies in (0, 1)."""

    theta: np.ndarray
    eta: np.ndarray


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


def cfn_core(p: CfnParams, h_tanh, h_gate, x_w, x_gate):
    """One CFN step with independently routed state/input copies.

    Returns (h_next, theta, eta, u, w) where u = tanh(h_tanh) and
    w = tanh(x_w @ W.T); the extras are exactly what the backward pass
    and the gate-trace consumers need.
    """
    theta = sigmoid(h_gate @ p.U_theta.T + x_gate @ p.V_theta.T + p.b_theta)
    eta = sigmoid(h_gate @ p.U_eta.T + x_gate @ p.V_eta.T + p.b_eta)
    u = np.tanh(h_tanh)
    w = np.tanh(x_w @ p.W.T)
    h = theta * u + eta * w
    return h, theta, eta, u, w


def lstm_core(p: LstmParams, c_prev, h_plain, h_gate, x_w, x_gate):
    """One LSTM step. Gates i/f/o read (h_gate, x_gate); the content
    path g reads (h_plain, x_w). Returns (h, c, i, f, o, g, tc)."""
    i = sigmoid(h_gate @ p.W_i.T + x_gate @ p.V_i.T + p.b_i)
    f = sigmoid(h_gate @ p.W_f.T + x_gate @ p.V_f.T + p.b_f)
    o = sigmoid(h_gate @ p.W_o.T + x_gate @ p.V_o.T + p.b_o)
    g = np.tanh(h_plain @ p.W_g.T + x_w @ p.V_g.T + p.b_g)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, i, f, o, g, tc


def gru_core(p: GruParams, h_plain, h_gate, x_w, x_gate):
    """One GRU step: h' = (1-z)*h + z*tanh(U(r*h) + V_u x).
    Returns (h, z, r, m, rh) with m the candidate and rh = r*h_plain."""
    z = sigmoid(h_gate @ p.W_z.T + x_gate @ p.V_z.T + p.b_z)
    r = sigmoid(h_gate @ p.W_r.T + x_gate @ p.V_r.T + p.b_r)
    rh = r * h_plain
    m = np.tanh(rh @ p.U.T + x_w @ p.V_u.T)
    h = (1.0 - z) * h_plain + z * m
    return h, z, r, m, rh


def _check_step_shapes(hidden: int, input_dim: int, h_prev, x) -> None:
    if h_prev.shape[-1] != hidden:
        raise ShapeError(f"state width {h_prev.shape[-1]} != hidden {hidden}")
    if x.shape[-1] != input_dim:
        raise ShapeError(f"input width {x.shape[-1]} != cell input {input_dim}")


def cfn_step(p: CfnParams, h_prev: np.ndarray, x: np.ndarray):
    """Advance a CFN cell one step; also returns the gate trace."""
    _check_step_shapes(p.hidden, p.input, h_prev, x)
    h, theta, eta, _, _ = cfn_core(p, h_prev, h_prev, x, x)
    return h, GateTrace(theta=theta, eta=eta)


def lstm_step(p: LstmParams, s_prev: LstmState, x: np.ndarray) -> LstmState:
    """Advance an LSTM cell one step."""
    _check_step_shapes(p.hidden, p.input, s_prev.h, x)
    h, c, *_ = lstm_core(p, s_prev.c, s_prev.h, s_prev.h, x, x)
    return LstmState(h=h, c=c)


def lstm_gates(p: LstmParams, s_prev: LstmState, x: np.ndarray):
    """Gate values (i, f, o) the next lstm_step would use."""
    _, _, i, f, o, _, _ = lstm_core(p, s_prev.c, s_prev.h, s_prev.h, x, x)
    return i, f, o


def gru_step(p: GruParams, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Advance a GRU cell one step."""
    _check_step_shapes(p.hidden, p.input, h_prev, x)
    h, *_ = gru_core(p, h_prev, h_prev, x, x)
    return h


def gru_gates(p: GruParams, h_prev: np.ndarray, x: np.ndarray):
    """Gate values (z, r) the next gru_step would use."""
    _, z, r, _, _ = gru_core(p, h_prev, h_prev, x, x)
    return z, r


def random_cfn_params(hidden: int, input_dim: int, rng: Rng,
                      lo: float = -2.0, hi: float = 2.0) -> CfnParams:
    """CFN cell with every tensor (biases included) uniform in [lo, hi).
    Used by the randomized dynamics suites, not by model training."""
    def mat(r, c):
        return rng.uniform(lo, hi, r * c).reshape(r, c)

    return CfnParams(
        W=mat(hidden, input_dim),
        U_theta=mat(hidden, hidden),
        V_theta=mat(hidden, input_dim),
        b_theta=rng.uniform(lo, hi, hidden),
        U_eta=mat(hidden, hidden),
        V_eta=mat(hidden, input_dim),
        b_eta=rng.uniform(lo, hi, hidden),
    )
