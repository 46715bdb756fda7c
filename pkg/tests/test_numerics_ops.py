import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ksgrank.numerics import Tensor, gradcheck, ops
from ksgrank.numerics.ops import ShapeError
from ksgrank.selftest import _op_cases

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("name", sorted(_op_cases(np.random.default_rng(0))))
def test_every_op_passes_gradcheck(name):
    fn, inputs = _op_cases(np.random.default_rng(7))[name]
    assert gradcheck(fn, inputs, eps=1e-5) <= 1e-4


def test_sigmoid_at_zero_and_its_gradient():
    x = Tensor(np.array([0.0]), requires_grad=True)
    y = ops.sigmoid(x)
    ops.sum(y).backward()
    assert y.data[0] == 0.5
    assert x.grad[0] == pytest.approx(0.25)


def test_cosine_of_vector_with_itself_is_one(rng):
    v = rng.normal(size=7)
    assert float(ops.cosine(v, v).data) == pytest.approx(1.0)


def test_cosine_with_zero_vector_is_zero():
    assert float(ops.cosine(np.zeros(3), np.ones(3)).data) == 0.0


def test_matmul_two_by_three_times_three_by_two(rng):
    a = Tensor(rng.normal(size=(2, 3)))
    b = Tensor(rng.normal(size=(3, 2)))
    assert gradcheck(lambda x, y: ops.sum(ops.matmul(x, y)), [a, b]) <= 1e-4


def test_linear_function_gradcheck_is_at_machine_precision(rng):
    a = Tensor(rng.normal(size=(4,)))
    w = rng.normal(size=4)
    assert gradcheck(lambda x: ops.sum(ops.mul(x, w)), [a]) < 1e-8


def test_corrupted_gradient_is_reported(rng):
    a = Tensor(rng.normal(size=(3, 3)))
    err = gradcheck(lambda x: ops.sum(ops.tanh(x)), [a], corrupt=lambda g: g * 1.01)
    assert err > 1e-4


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    s = ops.softmax(x, axis=1).data
    assert np.all(np.abs(s.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(s >= 0)


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-800, 800)))
def test_sigmoid_and_tanh_stay_in_their_codomains(x):
    s = ops.sigmoid(x).data
    t = ops.tanh(x).data
    assert np.all((s >= 0) & (s <= 1)) and np.all(np.isfinite(s))
    assert np.all((t >= -1) & (t <= 1))


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
              elements=st.sampled_from([-1.0, 0.0, 2.0, 2.0])))
def test_max_pool_gradient_only_at_first_argmax(x):
    t = Tensor(x.copy(), requires_grad=True)
    ops.sum(ops.max(t, axis=0)).backward()
    first = np.argmax(x, axis=0)
    expected = np.zeros_like(x)
    expected[first, np.arange(x.shape[1])] = 1.0
    assert np.array_equal(t.grad, expected)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_matmul_gradcheck_on_random_shapes(n, k, m, seed):
    r = np.random.default_rng(seed)
    a, b = Tensor(r.normal(size=(n, k))), Tensor(r.normal(size=(k, m)))
    assert gradcheck(lambda x, y: ops.sum(ops.tanh(ops.matmul(x, y))), [a, b]) <= 1e-4


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_perspective_cosine_gradcheck_on_random_shapes(rows, h, l, seed):
    r = np.random.default_rng(seed)
    a, b, w = (Tensor(r.normal(size=s)) for s in [(rows, h), (rows, h), (l, h)])
    assert gradcheck(lambda x, y, z: ops.sum(ops.perspective_cosine(x, y, z)), [a, b, w]) <= 1e-4


def test_perspective_cosine_with_ones_is_plain_cosine(rng):
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    pc = ops.perspective_cosine(a, b, np.ones((1, 5))).data[:, 0]
    assert np.allclose(pc, ops.cosine(a, b).data)


def test_shape_mismatch_names_the_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        ops.add(np.zeros((2, 3)), np.zeros(4))
    with pytest.raises(ShapeError):
        ops.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_squared_error_and_bce_values():
    assert np.allclose(ops.squared_error(np.array([0.0, 1.0]), np.array([1.0, 1.0])).data, [1.0, 0.0])
    z = np.array([0.3, -1.2])
    loss = float(ops.bce_with_logits(z, np.zeros(2)).data)
    p = 1 / (1 + np.exp(-z))
    assert loss == pytest.approx(-np.log(1 - p).sum())


def test_bce_is_finite_for_extreme_logits():
    assert np.isfinite(ops.bce_with_logits(np.array([1000.0, -1000.0]), np.array([0.0, 1.0])).data)


def test_mean_rows_counts_oov_tokens_in_the_divisor():
    table = np.array([[2.0, 4.0], [6.0, 8.0]])
    out = ops.mean_rows(table, [np.array([0]), np.array([0, 1]), np.array([], dtype=int)], [2, 2, 1]).data
    assert np.allclose(out, [[1.0, 2.0], [4.0, 6.0], [0.0, 0.0]])


def test_backward_is_deterministic(rng):
    x = rng.normal(size=(4, 3))
    grads = []
    for _ in range(2):
        t = Tensor(x.copy(), requires_grad=True)
        ops.sum(ops.softmax(ops.matmul(t, ops.transpose(t)), axis=1)).backward()
        grads.append(t.grad.tobytes())
    assert grads[0] == grads[1]


def test_gradient_accumulates_over_shared_use():
    x = Tensor(np.array([3.0]), requires_grad=True)
    ops.sum(ops.add(ops.mul(x, x), x)).backward()
    assert x.grad[0] == pytest.approx(7.0)
