import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grouplstm.errors import DimensionError, InputError
from grouplstm.lstm import (PARAM_ORDER, LstmParams, LstmState, lstm_backward, lstm_forward, lstm_init,
                            lstm_step)

from conftest import rel_err
from lstm_oracle import reference_step


def zero_params(D, N):
    p = lstm_init(D, N, 0)
    for _, a in p.tensors():
        a[...] = 0
    return p


def random_instance(seed, T, D, N, scale=1.0):
    rng = np.random.default_rng(seed)
    p = lstm_init(D, N, rng)
    for _, a in p.tensors():
        a[...] = rng.uniform(-scale, scale, a.shape)
    return p, rng.uniform(-2, 2, (T, D)), rng.normal(size=(T, N))


def as_longdouble(p: LstmParams) -> LstmParams:
    return LstmParams(**{k: a.astype(np.longdouble) for k, a in p.tensors()})


def numeric_grads(p, xs, dhs, step=1e-5):
    """Central differences of sum(h_t . dh_t) taken in long double."""
    wide, xw, dw = as_longdouble(p), xs.astype(np.longdouble), dhs.astype(np.longdouble)

    def loss():
        return (lstm_forward(wide, xw)[0] * dw).sum()

    out = {}
    for name, arr in list(wide.tensors()) + [("x", xw)]:
        g = np.zeros(arr.shape)
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss()
            flat[j] = orig - step
            down = loss()
            flat[j] = orig
            g.reshape(-1)[j] = float((up - down) / (2 * step))
        out[name] = g
    return out


def test_init_deterministic_and_bounded():
    a, b = lstm_init(4, 3, 9), lstm_init(4, 3, 9)
    assert all(x.tobytes() == y.tobytes() for (_, x), (_, y) in zip(a.tensors(), b.tensors()))
    c = lstm_init(4, 3, 10)
    assert not np.array_equal(a.W_xi, c.W_xi)
    for g in "ifoc":
        assert np.abs(getattr(a, f"W_x{g}")).max() <= 0.5
        assert np.abs(getattr(a, f"W_h{g}")).max() <= 1 / np.sqrt(3)
        assert not getattr(a, f"b_{g}").any()
    assert lstm_init(2, 2, 0, forget_bias=1.0).b_f.tolist() == [1.0, 1.0]
    with pytest.raises(InputError):
        lstm_init(0, 3, 0)


def test_param_order_is_gate_by_gate():
    assert PARAM_ORDER[:3] == ("W_xi", "W_hi", "b_i")
    assert PARAM_ORDER[-3:] == ("W_xc", "W_hc", "b_c")
    with pytest.raises(DimensionError):
        LstmParams(**{k: (np.zeros((3, 3)) if k == "W_xf" else a) for k, a in lstm_init(2, 3, 0).tensors()})


def test_zero_params_step():
    p = zero_params(3, 2)
    state, rec = lstm_step(p, np.ones(3), LstmState.zeros(2))
    for gate in (rec.i, rec.f, rec.o):
        np.testing.assert_array_equal(gate, 0.5)
    np.testing.assert_array_equal(rec.g, 0)
    np.testing.assert_array_equal(state.c, 0)
    np.testing.assert_array_equal(state.h, 0)
    v = np.array([1.5, -0.4])
    state, _ = lstm_step(p, np.ones(3), LstmState(np.zeros(2), v))
    np.testing.assert_array_equal(state.c, 0.5 * v)
    np.testing.assert_array_equal(state.h, 0.5 * np.tanh(0.5 * v))


def test_step_rejects_mismatch():
    p = lstm_init(3, 2, 0)
    with pytest.raises(DimensionError):
        lstm_step(p, np.ones(4), LstmState.zeros(2))
    with pytest.raises(DimensionError):
        lstm_step(p, np.ones(3), LstmState.zeros(5))


@pytest.mark.parametrize("seed", range(25))
def test_step_matches_straight_line_oracle(seed):
    rng = np.random.default_rng(seed)
    D, N = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    p, _, _ = random_instance(seed, 1, D, N)
    x, h, c = rng.uniform(-2, 2, D), rng.uniform(-1, 1, N), rng.uniform(-2, 2, N)
    state, rec = lstm_step(p, x, LstmState(h, c))
    ref_h, ref_c, gates = reference_step(dict(p.tensors()), x, h, c)
    assert np.abs(state.h - ref_h).max() < 1e-12
    assert np.abs(state.c - ref_c).max() < 1e-12
    for name, arr in (("i", rec.i), ("f", rec.f), ("o", rec.o), ("g", rec.g)):
        assert np.abs(arr - gates[name]).max() < 1e-12


def test_forward_t1_is_one_step():
    p, xs, _ = random_instance(3, 1, 4, 3)
    hs, tape = lstm_forward(p, xs)
    state, _ = lstm_step(p, xs[0], LstmState.zeros(3))
    assert hs[0].tobytes() == state.h.tobytes() and len(tape) == 1


def test_forward_zero_params_gives_zero_states():
    hs, _ = lstm_forward(zero_params(4, 3), np.random.default_rng(0).normal(size=(6, 4)))
    assert not hs.any()


def test_forward_fold_concatenation():
    p, xs, _ = random_instance(4, 8, 3, 5)
    full, _ = lstm_forward(p, xs)
    first, tape = lstm_forward(p, xs[:3])
    rest, _ = lstm_forward(p, xs[3:], tape.final_state)
    assert np.concatenate([first, rest]).tobytes() == full.tobytes()


def test_forward_batched_matches_single_sequences():
    rng = np.random.default_rng(2)
    p = lstm_init(3, 4, rng)
    xs = rng.normal(size=(5, 6, 3))
    hs, _ = lstm_forward(p, xs)
    for b in range(6):
        assert hs[:, b].tobytes() == lstm_forward(p, xs[:, b])[0].tobytes()


def test_forward_empty_is_error():
    with pytest.raises(InputError):
        lstm_forward(lstm_init(2, 2, 0), np.zeros((0, 2)))


def test_backward_zero_output_gradient():
    p, xs, _ = random_instance(5, 4, 3, 3)
    _, tape = lstm_forward(p, xs)
    grads, dxs = lstm_backward(p, tape, np.zeros((4, 3)))
    assert all(not g.any() for _, g in grads.tensors()) and not dxs.any()


def test_backward_length_mismatch():
    p, xs, _ = random_instance(5, 4, 3, 3)
    _, tape = lstm_forward(p, xs)
    with pytest.raises(InputError):
        lstm_backward(p, tape, np.zeros((3, 3)))


@pytest.mark.parametrize("T,D,N", [(1, 3, 4), (9, 4, 6)])
def test_backward_matches_differences(T, D, N):
    p, xs, dhs = random_instance(T * 100 + N, T, D, N)
    _, tape = lstm_forward(p, xs)
    grads, dxs = lstm_backward(p, tape, dhs)
    numeric = numeric_grads(p, xs, dhs)
    for name, g in grads.tensors():
        assert rel_err(g, numeric[name]) < 1e-6, name
    assert rel_err(dxs, numeric["x"]) < 1e-6


def test_cell_path_carries_gradient_across_time():
    # input gate open only at t=0, forget and output gates saturated open, no
    # recurrent weights: x_0 reaches h_5 solely through c_t = f * c_{t-1} + ...
    p = zero_params(1, 1)
    p.W_xi[...] = 40.0
    p.W_xc[...] = 1.0
    p.b_f[...] = 40.0
    p.b_o[...] = 40.0
    xs = np.array([[1.0], [-1], [-1], [-1], [-1], [-1]])
    hs, tape = lstm_forward(p, xs)
    c = np.tanh(1.0)
    np.testing.assert_allclose(hs[:, 0], np.tanh(c), rtol=1e-12)
    dhs = np.zeros((6, 1))
    dhs[-1] = 1.0
    _, dxs = lstm_backward(p, tape, dhs)
    expected = (1 - np.tanh(c) ** 2) * (1 - c ** 2)
    np.testing.assert_allclose(dxs[0, 0], expected, rtol=1e-12)


@settings(max_examples=8, deadline=None)
@given(st.integers(1, 9), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_gradient_exactness_random_shapes(T, D, N, seed):
    p, xs, dhs = random_instance(seed, T, D, N)
    _, tape = lstm_forward(p, xs)
    grads, dxs = lstm_backward(p, tape, dhs)
    numeric = numeric_grads(p, xs, dhs)
    worst = max(rel_err(g, numeric[name]) for name, g in grads.tensors())
    assert max(worst, rel_err(dxs, numeric["x"])) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_hidden_bounded_and_cell_finite(seed):
    p, xs, _ = random_instance(seed, 9, 4, 5, scale=3.0)
    hs, tape = lstm_forward(p, xs * 5)
    assert (np.abs(hs) < 1).all()
    assert all(np.isfinite(r.c).all() for r in tape.records)


def test_deterministic_bitwise():
    p, xs, dhs = random_instance(6, 5, 3, 4)
    runs = []
    for _ in range(2):
        hs, tape = lstm_forward(p, xs)
        grads, dxs = lstm_backward(p, tape, dhs)
        runs.append(hs.tobytes() + dxs.tobytes() + b"".join(g.tobytes() for _, g in grads.tensors()))
    assert runs[0] == runs[1]
