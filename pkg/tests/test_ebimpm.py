import numpy as np
import pytest
from hypothesis import given, strategies as st

from ksgrank.ebimpm import EBiMPM, EBiMPMConfig, cross_attention
from ksgrank.numerics import ParameterSet, Tensor, gradcheck, ops


def matcher(d_in=3, d=4, l=2, seed=0):
    return EBiMPM(ParameterSet(seed), "m", EBiMPMConfig(d_in, d, l, d))


def test_context_encoder_is_shared_and_input_agnostic(rng):
    m = matcher()
    x, y = rng.normal(size=(3, 3)), rng.normal(size=(2, 3))
    a, b = m.context_encode(x, x)
    assert np.array_equal(a.data, b.data)
    qx, sy = m.context_encode(x, y)
    sy2, qx2 = m.context_encode(y, x)
    assert np.array_equal(qx.data, qx2.data) and np.array_equal(sy.data, sy2.data)


def test_context_gradcheck(rng):
    m = matcher(seed=1)
    q, s = Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=(4, 3)))
    f = lambda a, b: ops.sum(ops.tanh(ops.concat(list(m.context_encode(a, b)), axis=0)))   # noqa: E731
    assert gradcheck(f, [q, s]) <= 1e-4


def test_attention_over_single_token_copies_it(rng):
    q, s = rng.normal(size=(3, 4)), rng.normal(size=(1, 4))
    q_att, _ = cross_attention(q, s)
    assert np.allclose(q_att.data, np.repeat(s, 3, axis=0))


def test_attention_by_hand_with_unit_vectors():
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = np.array([[1.0, 0.0], [0.0, 1.0]])
    q_att, s_att = cross_attention(q, s)
    e = np.e / (np.e + 1.0)
    expected = np.array([[e, 1 - e], [1 - e, e]])
    assert np.allclose(q_att.data, expected) and np.allclose(s_att.data, expected)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_attended_rows_are_convex_combinations(l1, l2, seed):
    r = np.random.default_rng(seed)
    q, s = r.normal(size=(l1, 3)), r.normal(size=(l2, 3))
    q_att, _ = cross_attention(q, s)
    lo, hi = s.min(axis=0) - 1e-12, s.max(axis=0) + 1e-12
    assert np.all((q_att.data >= lo) & (q_att.data <= hi))


def test_enhance_identity_and_zero_weight_cases(rng):
    m = matcher()
    x = rng.normal(size=(2, 4))
    w = m.fuse.weight.data
    direct = np.tanh(np.concatenate([x, x, 0 * x, x * x], axis=1) @ w + m.fuse.bias.data)
    assert np.allclose(m.enhance(x, x).data, direct)
    m.fuse.weight.data[:] = 0
    m.fuse.bias.data[:] = rng.normal(size=4)
    assert np.allclose(m.enhance(x, rng.normal(size=(2, 4))).data, np.tanh(np.tile(m.fuse.bias.data, (2, 1))))


def test_enhance_gradcheck(rng):
    m = matcher()
    x, xa = Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(2, 4)))
    assert gradcheck(lambda a, b, *_: ops.sum(m.enhance(a, b)), [x, xa, m.fuse.weight]) <= 1e-4


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_matching_shapes(l1, l2, l, seed):
    r = np.random.default_rng(seed)
    m = matcher(l=l, d=6, seed=seed % 100)
    q, s = m.context_encode(r.normal(size=(l1, 3)), r.normal(size=(l2, 3)))
    q_bar, s_bar = m.multi_perspective_match(q, s)
    assert q_bar.shape == (l1, 8 * l) and s_bar.shape == (l2, 8 * l)
    out = m(r.normal(size=(l1, 3)), r.normal(size=(l2, 3)))
    assert out.question.shape == (6,) and out.subgraph.shape == (6,)


def test_identical_sequences_full_match_is_one(rng):
    m = matcher(l=3)
    q, _ = m.context_encode(rng.normal(size=(4, 3)), rng.normal(size=(1, 3)))
    q_bar, s_bar = m.multi_perspective_match(q, q)
    l = 3
    # forward full matching of the last token against itself, backward of the first
    assert np.allclose(q_bar.data[-1, :l], 1.0)
    assert np.allclose(q_bar.data[0, 4 * l: 5 * l], 1.0)


def test_single_perspective_all_ones_is_plain_cosine(rng):
    m = matcher(l=1)
    for w in m.match_weights.values():
        w.data[:] = 1.0
    q, s = m.context_encode(rng.normal(size=(3, 3)), rng.normal(size=(2, 3)))
    q_bar, _ = m.multi_perspective_match(q, s)
    half = 2
    assert np.allclose(q_bar.data[:, 0], ops.cosine(q.data[:, :half], s.data[-1, :half]).data)


def test_single_token_pooling_is_identity(rng):
    m = matcher()
    q_bar, q_hat = rng.normal(size=(1, 16)), rng.normal(size=(1, 4))
    out = m.aggregate_final(q_bar, q_hat, q_bar, q_hat)
    assert np.array_equal(out.question.data, m.aggregate(np.concatenate([q_bar, q_hat], 1)).data[0])


def test_aggregation_is_order_sensitive(rng):
    m = matcher()
    x = rng.normal(size=(3, 3))
    y = rng.normal(size=(2, 3))
    assert not np.allclose(m(x, y).question.data, m(x[::-1].copy(), y).question.data)


def test_end_to_end_gradcheck(rng):
    m = matcher(seed=2)
    q, s = Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=(2, 3)))
    f = lambda a, b: ops.cosine(m(a, b).question, m(a, b).subgraph)   # noqa: E731
    assert gradcheck(f, [q, s]) <= 1e-4


def test_odd_widths_are_rejected():
    with pytest.raises(ValueError):
        EBiMPMConfig(3, 5, 2, 4)
