import numpy as np
import pytest
from hypothesis import given, strategies as st

from ksgrank.numerics import BiLSTM, ParameterSet, Tensor, gradcheck, ops
from ksgrank.numerics.layers import gru_cell, gru_cell_reference, lstm


def naive_lstm(x, wx, wh, b, reverse=False):
    d = wh.shape[0]
    sig = lambda z: 1 / (1 + np.exp(-z))   # noqa: E731
    h, c = np.zeros(d), np.zeros(d)
    out = np.zeros((x.shape[0], d))
    order = range(x.shape[0] - 1, -1, -1) if reverse else range(x.shape[0])
    for t in order:
        a = x[t] @ wx + h @ wh + b
        i, f, g, o = sig(a[:d]), sig(a[d:2 * d]), np.tanh(a[2 * d:3 * d]), sig(a[3 * d:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_matches_textbook_recurrence(rng, reverse):
    x, wx, wh, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
    assert np.allclose(lstm(x, wx, wh, b, reverse=reverse).data, naive_lstm(x, wx, wh, b, reverse), atol=1e-12)


def test_gru_zero_weights_halve_the_state(rng):
    h = rng.uniform(-1, 1, size=(2, 4))
    out = gru_cell(rng.normal(size=(2, 3)), h, np.zeros((3, 12)), np.zeros((4, 12)), np.zeros(12)).data
    assert np.allclose(out, 0.5 * h)


def test_fused_gru_equals_primitive_composition(rng):
    args = [rng.normal(size=s) for s in [(3, 2), (3, 4), (2, 12), (4, 12), (12,)]]
    assert np.allclose(gru_cell(*args).data, gru_cell_reference(*args).data, atol=1e-14)


def test_gru_gradcheck_on_eight_wide_cell(rng):
    ins = [Tensor(rng.normal(size=s)) for s in [(1, 8), (1, 8), (8, 24), (8, 24), (24,)]]
    assert gradcheck(lambda *a: ops.sum(ops.tanh(gru_cell(*a))), ins) <= 1e-4


@given(st.integers(0, 2**31 - 1))
def test_gru_keeps_state_inside_unit_box(seed):
    r = np.random.default_rng(seed)
    w, u, b = r.normal(size=(3, 12)), r.normal(size=(4, 12)), r.normal(size=12)
    h = r.uniform(-1, 1, size=(1, 4))
    for _ in range(30):
        h = gru_cell(np.zeros((1, 3)), h, w, u, b).data
        assert np.all(np.abs(h) < 1)


def test_bilstm_single_step_sees_the_same_input(rng):
    params = ParameterSet(0)
    layer = BiLSTM(params, "b", 3, 2)
    x = rng.normal(size=(1, 3))
    out = layer(x).data
    assert np.allclose(out[:, :2], naive_lstm(x, layer.fwd.wx.data, layer.fwd.wh.data, layer.fwd.b.data))
    assert np.allclose(out[:, 2:], naive_lstm(x, layer.bwd.wx.data, layer.bwd.wh.data, layer.bwd.b.data))


def test_reversing_input_swaps_directions_when_weights_are_shared(rng):
    params = ParameterSet(0)
    layer = BiLSTM(params, "b", 3, 2)
    for name in ("wx", "wh", "b"):
        getattr(layer.bwd, name).data = getattr(layer.fwd, name).data.copy()
    x = rng.normal(size=(4, 3))
    out, rev = layer(x).data, layer(x[::-1].copy()).data
    assert np.allclose(out[:, :2], rev[::-1, 2:])
    assert np.allclose(out[:, 2:], rev[::-1, :2])


def test_bilstm_gradcheck_three_steps_hidden_four(rng):
    params = ParameterSet(3)
    layer = BiLSTM(params, "b", 2, 4)
    x = Tensor(rng.normal(size=(3, 2)))
    weights = [t for _, t in params.items()]
    assert gradcheck(lambda *a: ops.sum(ops.tanh(layer(a[0]))), [x] + weights) <= 1e-4


def test_lstm_rejects_empty_sequence():
    with pytest.raises(ops.ShapeError):
        lstm(np.zeros((0, 3)), np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
