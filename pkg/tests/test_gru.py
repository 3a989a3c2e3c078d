"""GRU cell: worked examples, a straight-line scalar oracle, and bounds."""
import math

import numpy as np
import pytest

from samnet import kernels as K
from samnet.errors import ShapeError
from samnet.gru import GruParams, gru_step, init_gru
from samnet.instrument import Meter
from samnet.kernels import Tape, backward


def zero_gru(input_dim, hidden_dim):
    def z(*shape):
        return K.parameter(np.zeros(shape), "z")

    return GruParams(
        z(hidden_dim, input_dim), z(hidden_dim, input_dim), z(hidden_dim, input_dim),
        z(hidden_dim, hidden_dim), z(hidden_dim, hidden_dim), z(hidden_dim, hidden_dim),
        z(hidden_dim), z(hidden_dim), z(hidden_dim),
    )


def scalar_gru_oracle(x, h, p):
    """Gate equations re-derived with plain python floats, no arrays."""

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    hid, inp = p.w_r.data.shape
    out = []
    for k in range(hid):
        r = sig(sum(p.w_r.data[k][j] * x[j] for j in range(inp))
                + sum(p.u_r.data[k][j] * h[j] for j in range(hid)) + p.b_r.data[k])
        z = sig(sum(p.w_z.data[k][j] * x[j] for j in range(inp))
                + sum(p.u_z.data[k][j] * h[j] for j in range(hid)) + p.b_z.data[k])
        out.append((r, z))
    hc = []
    for k in range(hid):
        rh = [out[j][0] * h[j] for j in range(hid)]
        hc.append(math.tanh(sum(p.w_h.data[k][j] * x[j] for j in range(inp))
                            + sum(p.u_h.data[k][j] * rh[j] for j in range(hid))
                            + p.b_h.data[k]))
    return [(1 - out[k][1]) * h[k] + out[k][1] * hc[k] for k in range(hid)]


def test_zero_params_halve_the_state():
    p = zero_gru(3, 2)
    h = K.constant([1.0, -2.0])
    x = K.constant([9.0, -3.0, 0.5])
    np.testing.assert_allclose(gru_step(x, h, p).data, [0.5, -1.0], rtol=1e-15)


def test_zero_state_is_a_fixed_point_of_zero_params():
    p = zero_gru(2, 2)
    out = gru_step(K.constant([1.0, 1.0]), K.constant([0.0, 0.0]), p)
    np.testing.assert_array_equal(out.data, [0.0, 0.0])


def test_random_case_matches_scalar_oracle():
    rng = np.random.default_rng(5)
    p = init_gru(3, 4, rng, "g")
    x = rng.normal(size=3)
    h = rng.normal(size=4)
    got = gru_step(K.constant(x), K.constant(h), p).data
    want = scalar_gru_oracle(list(x), list(h), p)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_output_bounded_by_state_and_unit_interval():
    rng = np.random.default_rng(6)
    for _ in range(100):
        p = init_gru(4, 4, rng, "g")
        h = rng.uniform(-3, 3, size=4)
        x = rng.uniform(-3, 3, size=4)
        out = gru_step(K.constant(x), K.constant(h), p).data
        assert (np.abs(out) <= np.maximum(np.abs(h), 1.0) + 1e-12).all()


def test_batched_rows_match_individual_calls():
    rng = np.random.default_rng(8)
    p = init_gru(3, 4, rng, "g")
    xs = rng.normal(size=(5, 3))
    hs = rng.normal(size=(5, 4))
    batched = gru_step(K.constant(xs), K.constant(hs), p).data
    for i in range(5):
        single = gru_step(K.constant(xs[i]), K.constant(hs[i]), p).data
        np.testing.assert_allclose(batched[i], single, rtol=1e-12)


def test_gradients_match_finite_differences():
    from test_kernels import fd_gradient, max_rel_err

    rng = np.random.default_rng(9)
    p = init_gru(3, 3, rng, "g")
    x = K.parameter(rng.normal(size=3), "x")
    h = K.parameter(rng.normal(size=3), "h")

    def loss():
        return K.sum_all(gru_step(x, h, p))

    with Tape() as tape:
        backward(tape, loss())
    for t in (x, h, p.w_r, p.u_h, p.b_z):
        assert max_rel_err(t.grad, fd_gradient(loss, t)) < 1e-5


def test_each_call_counts_one_sequential_op():
    p = zero_gru(2, 2)
    with Meter() as m:
        h = K.constant([1.0, 1.0])
        for _ in range(4):
            h = gru_step(K.constant([0.0, 0.0]), h, p)
    assert m.gru_steps == 4


def test_dimension_mismatch():
    p = zero_gru(3, 2)
    with pytest.raises(ShapeError, match="input width"):
        gru_step(K.constant([1.0, 2.0]), K.constant([0.0, 0.0]), p)
