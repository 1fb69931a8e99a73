"""Single-step recurrences against hand-computed scalar oracles.

Every expected value here is recomputed inside the test through plain
math.exp / math.tanh arithmetic, independent of the array code under
test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfnlab.cells import (
    CfnParams,
    GruParams,
    LstmParams,
    LstmState,
    cfn_step,
    gru_gates,
    gru_step,
    lstm_gates,
    lstm_step,
    random_cfn_params,
)
from cfnlab.errors import ShapeError
from cfnlab.numkit import Rng


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_cfn(hidden=1, input_dim=1, W=2.0, U_t=0.5, V_t=-1.0, b_t=1.0,
               U_e=-0.25, V_e=0.5, b_e=-1.0):
    return CfnParams(
        W=np.array([[W]]),
        U_theta=np.array([[U_t]]), V_theta=np.array([[V_t]]),
        b_theta=np.array([b_t]),
        U_eta=np.array([[U_e]]), V_eta=np.array([[V_e]]),
        b_eta=np.array([b_e]),
    )


class TestCfn:
    def test_scalar_step_matches_hand_arithmetic(self):
        p = scalar_cfn()
        h, trace = cfn_step(p, np.array([0.5]), np.array([0.25]))
        theta = sig(0.5 * 0.5 + (-1.0) * 0.25 + 1.0)
        eta = sig(-0.25 * 0.5 + 0.5 * 0.25 + (-1.0))
        want = theta * math.tanh(0.5) + eta * math.tanh(2.0 * 0.25)
        assert float(h[0]) == pytest.approx(want, rel=1e-15)
        assert float(trace.theta[0]) == pytest.approx(theta, rel=1e-15)
        assert float(trace.eta[0]) == pytest.approx(eta, rel=1e-15)

    def test_zero_input_reduces_to_autonomous_form(self):
        p = scalar_cfn()
        h, _ = cfn_step(p, np.array([0.8]), np.array([0.0]))
        want = sig(0.5 * 0.8 + 1.0) * math.tanh(0.8)
        assert float(h[0]) == pytest.approx(want, rel=1e-15)

    def test_unit_bias_gates_at_rest(self):
        # b_theta=1, b_eta=-1 pins the resting gates near 0.73 / 0.27
        p = scalar_cfn(U_t=0.0, V_t=0.0, U_e=0.0, V_e=0.0)
        _, trace = cfn_step(p, np.array([0.0]), np.array([0.0]))
        assert float(trace.theta[0]) == pytest.approx(sig(1.0), rel=1e-15)
        assert float(trace.eta[0]) == pytest.approx(sig(-1.0), rel=1e-15)
        assert 0.70 < float(trace.theta[0]) < 0.74
        assert 0.26 < float(trace.eta[0]) < 0.28

    def test_batched_step_equals_rowwise_steps(self):
        rng = Rng(11)
        p = random_cfn_params(3, 2, rng)
        hs = rng.uniform(-1.0, 1.0, 6).reshape(2, 3)
        xs = rng.uniform(-1.0, 1.0, 4).reshape(2, 2)
        hb, tb = cfn_step(p, hs, xs)
        # matrix-matrix and matrix-vector products may round differently
        for b in range(2):
            hr, tr = cfn_step(p, hs[b], xs[b])
            np.testing.assert_allclose(hb[b], hr, rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(tb.theta[b], tr.theta,
                                       rtol=1e-13, atol=1e-15)

    def test_shape_mismatch_raises(self):
        p = scalar_cfn()
        with pytest.raises(ShapeError):
            cfn_step(p, np.array([0.5, 0.5]), np.array([0.25]))
        with pytest.raises(ShapeError):
            cfn_step(p, np.array([0.5]), np.array([0.25, 0.25]))

    def test_param_record_rejects_inconsistent_shapes(self):
        with pytest.raises(ShapeError):
            CfnParams(
                W=np.zeros((2, 2)),
                U_theta=np.zeros((2, 3)), V_theta=np.zeros((2, 2)),
                b_theta=np.zeros(2),
                U_eta=np.zeros((2, 2)), V_eta=np.zeros((2, 2)),
                b_eta=np.zeros(2),
            )

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(derandomize=True, max_examples=40)
    def test_state_magnitude_below_two_and_gates_open(self, seed):
        # |h'| <= theta + eta < 2 regardless of weights or inputs
        rng = Rng(seed)
        p = random_cfn_params(4, 3, rng, lo=-5.0, hi=5.0)
        h0 = rng.uniform(-50.0, 50.0, 4)
        x = rng.uniform(-50.0, 50.0, 3)
        h, trace = cfn_step(p, h0, x)
        # mathematically |h'| < 2 strictly; float saturation of the
        # gates and tanh makes exactly 2.0 reachable
        assert np.all(np.abs(h) <= 2.0)
        assert np.all(trace.theta >= 0.0) and np.all(trace.theta <= 1.0)
        assert np.all(trace.eta >= 0.0) and np.all(trace.eta <= 1.0)


def two_unit_lstm(W_i, W_f, W_o, W_g):
    z22 = np.zeros((2, 2))
    z2 = np.zeros(2)
    return LstmParams(
        W_i=np.array(W_i, dtype=float), V_i=z22.copy(), b_i=z2.copy(),
        W_f=np.array(W_f, dtype=float), V_f=z22.copy(), b_f=z2.copy(),
        W_o=np.array(W_o, dtype=float), V_o=z22.copy(), b_o=z2.copy(),
        W_g=np.array(W_g, dtype=float), V_g=z22.copy(), b_g=z2.copy(),
    )


class TestLstm:
    def test_two_unit_step_matches_hand_arithmetic(self):
        p = two_unit_lstm(
            W_i=[[-1, -4], [-3, -2]],
            W_f=[[-2, 6], [0, -6]],
            W_o=[[4, 1], [-9, -7]],
            W_g=[[-1, -6], [6, -9]],
        )
        s = lstm_step(p, LstmState(h=np.ones(2), c=np.zeros(2)), np.zeros(2))
        i = (sig(-1 - 4), sig(-3 - 2))
        f = (sig(-2 + 6), sig(0 - 6))
        o = (sig(4 + 1), sig(-9 - 7))
        g = (math.tanh(-1 - 6), math.tanh(6 - 9))
        for k in range(2):
            c_want = f[k] * 0.0 + i[k] * g[k]
            h_want = o[k] * math.tanh(c_want)
            assert float(s.c[k]) == pytest.approx(c_want, rel=1e-15)
            assert float(s.h[k]) == pytest.approx(h_want, rel=1e-15)

    def test_gate_probe_matches_step_internals(self):
        p = two_unit_lstm(
            W_i=[[1, 0], [0, 1]], W_f=[[0, 1], [1, 0]],
            W_o=[[1, 1], [0, 0]], W_g=[[0, 0], [1, 1]],
        )
        s0 = LstmState(h=np.array([0.3, -0.7]), c=np.array([0.1, 0.2]))
        i, f, o = lstm_gates(p, s0, np.zeros(2))
        assert float(i[0]) == pytest.approx(sig(0.3), rel=1e-15)
        assert float(f[0]) == pytest.approx(sig(-0.7), rel=1e-15)
        assert float(o[0]) == pytest.approx(sig(0.3 - 0.7), rel=1e-15)

    def test_closed_gates_preserve_cell_state(self):
        # with f ~= 1 and i ~= 0 the cell state is carried verbatim
        z22 = np.zeros((2, 2))
        p = LstmParams(
            W_i=z22.copy(), V_i=z22.copy(), b_i=np.full(2, -500.0),
            W_f=z22.copy(), V_f=z22.copy(), b_f=np.full(2, 500.0),
            W_o=z22.copy(), V_o=z22.copy(), b_o=np.zeros(2),
            W_g=z22.copy(), V_g=z22.copy(), b_g=np.zeros(2),
        )
        s = lstm_step(p, LstmState(h=np.zeros(2), c=np.array([0.5, -1.5])),
                      np.zeros(2))
        np.testing.assert_allclose(s.c, [0.5, -1.5], rtol=0, atol=0)

    def test_batched_step_equals_rowwise_steps(self):
        rng = Rng(21)

        def mat():
            return rng.uniform(-1.0, 1.0, 4).reshape(2, 2)

        p = LstmParams(
            W_i=mat(), V_i=mat(), b_i=rng.uniform(-1, 1, 2),
            W_f=mat(), V_f=mat(), b_f=rng.uniform(-1, 1, 2),
            W_o=mat(), V_o=mat(), b_o=rng.uniform(-1, 1, 2),
            W_g=mat(), V_g=mat(), b_g=rng.uniform(-1, 1, 2),
        )
        hs = rng.uniform(-1, 1, 6).reshape(3, 2)
        cs = rng.uniform(-1, 1, 6).reshape(3, 2)
        xs = rng.uniform(-1, 1, 6).reshape(3, 2)
        sb = lstm_step(p, LstmState(h=hs, c=cs), xs)
        for b in range(3):
            sr = lstm_step(p, LstmState(h=hs[b], c=cs[b]), xs[b])
            np.testing.assert_allclose(sb.h[b], sr.h, rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(sb.c[b], sr.c, rtol=1e-13, atol=1e-15)

    def test_shape_mismatch_raises(self):
        p = two_unit_lstm([[0, 0], [0, 0]], [[0, 0], [0, 0]],
                          [[0, 0], [0, 0]], [[0, 0], [0, 0]])
        with pytest.raises(ShapeError):
            lstm_step(p, LstmState(h=np.zeros(3), c=np.zeros(3)), np.zeros(2))


def two_unit_gru(W_z, W_r, U):
    z22 = np.zeros((2, 2))
    return GruParams(
        W_z=np.array(W_z, dtype=float), V_z=z22.copy(), b_z=np.zeros(2),
        W_r=np.array(W_r, dtype=float), V_r=z22.copy(), b_r=np.zeros(2),
        U=np.array(U, dtype=float), V_u=z22.copy(),
    )


class TestGru:
    def test_two_unit_step_matches_hand_arithmetic(self):
        p = two_unit_gru(
            W_z=[[0, 1], [1, 1]],
            W_r=[[0, 1], [1, 0]],
            U=[[-5, -8], [8, 5]],
        )
        h = gru_step(p, np.array([0.5, 0.5]), np.zeros(2))
        z = (sig(0.5), sig(1.0))
        r = (sig(0.5), sig(0.5))
        rh = (r[0] * 0.5, r[1] * 0.5)
        m = (math.tanh(-5 * rh[0] - 8 * rh[1]),
             math.tanh(8 * rh[0] + 5 * rh[1]))
        for k in range(2):
            want = (1.0 - z[k]) * 0.5 + z[k] * m[k]
            assert float(h[k]) == pytest.approx(want, rel=1e-15)

    def test_gate_probe(self):
        p = two_unit_gru([[1, 0], [0, 1]], [[0, 1], [1, 0]], [[0, 0], [0, 0]])
        z, r = gru_gates(p, np.array([0.25, -0.75]), np.zeros(2))
        assert float(z[0]) == pytest.approx(sig(0.25), rel=1e-15)
        assert float(r[0]) == pytest.approx(sig(-0.75), rel=1e-15)

    def test_closed_update_gate_is_identity(self):
        z22 = np.zeros((2, 2))
        p = GruParams(
            W_z=z22.copy(), V_z=z22.copy(), b_z=np.full(2, -500.0),
            W_r=z22.copy(), V_r=z22.copy(), b_r=np.zeros(2),
            U=np.eye(2), V_u=z22.copy(),
        )
        h0 = np.array([0.4, -0.9])
        np.testing.assert_allclose(gru_step(p, h0, np.zeros(2)), h0,
                                   rtol=0, atol=0)

    def test_batched_step_equals_rowwise_steps(self):
        rng = Rng(31)

        def mat():
            return rng.uniform(-1.0, 1.0, 4).reshape(2, 2)

        p = GruParams(
            W_z=mat(), V_z=mat(), b_z=rng.uniform(-1, 1, 2),
            W_r=mat(), V_r=mat(), b_r=rng.uniform(-1, 1, 2),
            U=mat(), V_u=mat(),
        )
        hs = rng.uniform(-1, 1, 4).reshape(2, 2)
        xs = rng.uniform(-1, 1, 4).reshape(2, 2)
        hb = gru_step(p, hs, xs)
        for b in range(2):
            np.testing.assert_allclose(hb[b], gru_step(p, hs[b], xs[b]),
                                       rtol=1e-13, atol=1e-15)

    def test_shape_mismatch_raises(self):
        p = two_unit_gru([[0, 0], [0, 0]], [[0, 0], [0, 0]], [[0, 0], [0, 0]])
        with pytest.raises(ShapeError):
            gru_step(p, np.zeros(2), np.zeros(3))


def test_random_cfn_params_bounds_and_shapes():
    p = random_cfn_params(5, 3, Rng(2), lo=-2.0, hi=2.0)
    assert p.hidden == 5 and p.input == 3
    for name, t in p.tensors():
        assert np.all(t >= -2.0) and np.all(t < 2.0), name
    names = [n for n, _ in p.tensors()]
    assert names == ["W", "U_theta", "V_theta", "b_theta",
                     "U_eta", "V_eta", "b_eta"]
