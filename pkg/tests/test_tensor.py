import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from hcft import tensor as T
from hcft.errors import NonFinite, NotScalar, ShapeMismatch, TapeConsumed
from hcft.tensor import Tensor

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_create_copies_values():
    vals = np.array([1.0, 2.0, 3.0, 4.0])
    t = T.create([2, 2], vals)
    vals[0] = 99
    assert t.data.tolist() == [[1, 2], [3, 4]]
    assert T.create([3], [0, 0, 0]).data.tolist() == [0, 0, 0]


@pytest.mark.parametrize("shape, values", [([2], [1, 2, 3]), ([0, 2], []), ([2, 2], [1, 2, 3])])
def test_create_rejects_bad_shape(shape, values):
    with pytest.raises(ShapeMismatch):
        T.create(shape, values)


def test_matmul_examples(rng):
    b = Tensor(rng.standard_normal((2, 2)))
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), b).data, b.data)
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert out.data.tolist() == [[3.0], [7.0]]
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_sum_gradient_is_ones_times_bt(rng):
    a = T.parameter(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((4, 5)))
    T.backward(T.matmul(a, b).sum())
    assert np.allclose(a.grad, np.ones((3, 5)) @ b.data.T, atol=1e-12)
    numeric = T.finite_diff_grad(lambda x: T.matmul(x, b).sum(), a)
    assert T.relative_error(a.grad, numeric) < 1e-8


def test_matmul_associativity(rng):
    a, b, c = (Tensor(rng.standard_normal((4, 4))) for _ in range(3))
    left = T.matmul(T.matmul(a, b), c).data
    right = T.matmul(a, T.matmul(b, c)).data
    assert np.max(np.abs(left - right)) < 1e-10


def test_unary_anchors():
    assert T.tanh(Tensor([0.0])).data[0] == 0.0
    assert T.gelu(Tensor([0.0])).data[0] == 0.0
    assert abs(T.gelu(Tensor([10.0])).data[0] - 10.0) < 1e-6
    # 1 * Phi(1) from the erf form of the normal CDF
    assert abs(T.gelu(Tensor([1.0])).data[0] - 0.5 * (1 + math.erf(1 / math.sqrt(2)))) < 1e-12
    assert abs(T.gelu(Tensor([1.0])).data[0] - 0.841345) < 1e-6


def test_broadcast_rules():
    a = Tensor(np.ones((2, 3)))
    assert (a + Tensor(np.arange(3.0))).shape == (2, 3)
    with pytest.raises(ShapeMismatch):
        a + Tensor(np.ones(2))


def test_softmax_examples():
    assert np.allclose(T.softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=1e-15)
    big = T.softmax_lastdim(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big)) and abs(big[0] - 1) < 1e-12 and big[1] < 1e-12
    x = np.array([1.0, 2.0, 3.0])
    oracle = np.exp(x) / np.exp(x).sum()
    got = T.softmax_lastdim(Tensor(x)).data
    assert np.allclose(got, oracle, atol=1e-15)
    assert np.allclose(got, [0.090031, 0.244728, 0.665241], atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_are_distributions(x):
    with T.precision(np.float64):
        s = T.softmax_lastdim(Tensor(x)).data
    assert np.all(s >= 0) and np.all(s <= 1)
    assert np.all(np.abs(s.sum(axis=-1) - 1) <= 1e-12)


def test_backward_examples():
    x = T.parameter([1.0, 2.0])
    T.backward(x.sum())
    assert x.grad.tolist() == [1.0, 1.0]
    y = T.parameter([1.0, 2.0])
    T.backward((y * y).sum())
    assert y.grad.tolist() == [2.0, 4.0]


def test_backward_errors():
    x = T.parameter([1.0, 2.0])
    with pytest.raises(NotScalar):
        T.backward(x * 2.0)
    with pytest.raises(NotScalar):
        T.backward(Tensor([1.0]).sum())
    loss = (x * x).sum()
    T.backward(loss)
    with pytest.raises(TapeConsumed):
        T.backward(loss)


def test_tape_is_topological_and_touches_leaves_once(rng):
    a = T.parameter(rng.standard_normal((2, 3)))
    b = T.parameter(rng.standard_normal((3,)))
    h = T.tanh(a + b)
    loss = (h * h + T.exp(h)).sum()        # h feeds two branches
    tape = T.Tape.record(loss)
    position = {id(n): i for i, n in enumerate(tape.nodes)}
    for node in tape.operations:
        assert all(position[id(p)] < position[id(node)] for p in node._parents if p.requires_grad)
    assert len(tape.leaves) == 2 and len({id(n) for n in tape.nodes}) == len(tape.nodes)
    T.backward(loss)
    for leaf in (a, b):
        numeric = T.finite_diff_grad(lambda x, leaf=leaf: (lambda hh: (hh * hh + T.exp(hh)).sum())(
            T.tanh((x if leaf is a else a) + (x if leaf is b else b))), leaf)
        assert T.relative_error(leaf.grad, numeric) < 1e-7


def test_finite_diff_examples():
    x = Tensor(np.array([3.0]))
    assert abs(T.finite_diff_grad(lambda t: (t * t).sum(), x)[0] - 6.0) < 1e-8
    y = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.allclose(T.finite_diff_grad(lambda t: t.sum(), y), 1.0)
    with pytest.raises(ValueError):
        T.finite_diff_grad(lambda t: t.sum(), y, eps=0)
    with pytest.raises(NonFinite), np.errstate(over="ignore"):
        T.finite_diff_grad(lambda t: T.scale(t, 1e308) * 1e10, Tensor([1.0]))


def test_no_grad_builds_no_graph():
    x = T.parameter([1.0])
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_precision_switches_dtype():
    with T.precision(np.float32):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=2, max_size=8), st.integers(0, 10_000))
def test_composed_graph_matches_finite_differences(values, seed):
    with T.precision(np.float64):
        rng = np.random.default_rng(seed)
        x = T.parameter(np.array(values))
        w = Tensor(rng.standard_normal(len(values)))

        def f(t):
            return (T.gelu(t * w) * T.tanh(t) + T.exp(T.scale(t, 0.3))).sum()

        T.backward(f(x))
        numeric = T.finite_diff_grad(f, x)
        assert T.relative_error(x.grad, numeric, floor=1e-6) <= 1e-4
