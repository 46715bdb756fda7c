import numpy as np
import pytest
from hypothesis import given, strategies as st

from ksgrank.biggnn import IN, OUT, BiGGNN, BiGGNNConfig, aggregate
from ksgrank.numerics import ParameterSet, Tensor, gradcheck, ops


def test_isolated_node_gets_zero_message(rng):
    h = rng.normal(size=(3, 2))
    adj = np.zeros((3, 3))
    adj[0, 1] = 1
    w = rng.normal(size=(2, 2))
    assert not aggregate(h, adj, w, OUT).data[2].any()
    assert not aggregate(h, adj, w, IN).data[2].any()


def test_single_neighbour_message_is_weighted_state(rng):
    h, w = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
    adj = np.array([[0.0, 1.0], [0.0, 0.0]])          # edge 0 -> 1
    assert np.allclose(aggregate(h, adj, w, OUT).data[0], h[1] @ w)
    assert np.allclose(aggregate(h, adj, w, IN).data[1], h[0] @ w)


def test_three_node_path_by_hand():
    h = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    w = np.array([[1.0, 2.0], [0.0, 1.0]])
    adj = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=float)   # 0 -> 1 -> 2
    out = aggregate(h, adj, w, OUT).data
    assert np.allclose(out, [[0.0, 1.0], [1.0, 3.0], [0.0, 0.0]])
    inc = aggregate(h, adj, w, IN).data
    assert np.allclose(inc, [[0.0, 0.0], [1.0, 2.0], [0.0, 1.0]])


def encoder(hidden=3, layers=2, d_in=4, seed=0):
    return BiGGNN(ParameterSet(seed), "g", BiGGNNConfig(hidden, layers, d_in))


def test_zero_messages_and_zero_gru_halve_states(rng):
    enc = encoder()
    for cell in enc.gru.values():
        for t in (cell.w, cell.u, cell.b):
            t.data[:] = 0
    h = rng.normal(size=(2, 3))
    assert np.allclose(enc.layer_update(np.zeros((2, 3)), h, OUT).data, 0.5 * h)


def test_node_updates_are_independent_given_messages(rng):
    enc = encoder()
    m, h = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    base = enc.layer_update(m, h, IN).data
    m2 = m.copy()
    m2[0] += 5.0
    moved = enc.layer_update(m2, h, IN).data
    assert np.array_equal(base[1:], moved[1:]) and not np.allclose(base[0], moved[0])


def test_two_layer_gradcheck(rng):
    params = ParameterSet(4)
    enc = BiGGNN(params, "g", BiGGNNConfig(2, 2, 3))
    x = Tensor(rng.normal(size=(3, 3)))
    adj = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
    params = [t for _, t in params.items()]
    assert gradcheck(lambda a, *_: ops.sum(ops.tanh(enc.encode(a, adj).nodes)), [x] + params) <= 1e-4


def test_single_node_graph_embedding_is_its_state(rng):
    out = encoder().encode(rng.normal(size=(1, 4)), np.zeros((1, 1)))
    assert np.array_equal(out.graph.data, out.nodes.data[0])


def test_default_depth_is_two():
    assert BiGGNNConfig().layers == 2


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_shapes_readout_and_permutation_invariance(n, hidden, seed):
    r = np.random.default_rng(seed)
    enc = encoder(hidden=hidden, d_in=3, seed=seed % 100)
    x = r.normal(size=(n, 3))
    adj = (r.random((n, n)) < 0.4).astype(float)
    out = enc.encode(x, adj)
    assert out.nodes.shape == (n, 2 * hidden) and out.graph.shape == (2 * hidden,)
    assert np.array_equal(out.graph.data, out.nodes.data.max(axis=0))
    perm = r.permutation(n)
    again = enc.encode(x[perm], adj[np.ix_(perm, perm)])
    assert np.allclose(again.graph.data, out.graph.data, atol=1e-12)
    assert np.allclose(again.nodes.data, out.nodes.data[perm], atol=1e-12)


def test_edge_direction_matters(rng):
    enc = encoder(d_in=2)
    x = rng.normal(size=(2, 2))
    fwd = enc.encode(x, np.array([[0.0, 1.0], [0.0, 0.0]])).nodes.data
    bwd = enc.encode(x, np.array([[0.0, 0.0], [1.0, 0.0]])).nodes.data
    assert not np.allclose(fwd, bwd)


def test_empty_graph_and_bad_adjacency_are_errors():
    enc = encoder()
    with pytest.raises(ValueError):
        enc.encode(np.zeros((0, 4)), np.zeros((0, 0)))
    with pytest.raises(ops.ShapeError):
        enc.encode(np.zeros((2, 4)), np.zeros((3, 3)))
