import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tlaser import autograd as ag
from tlaser.autograd import DegenerateMaskError, NumericError, ShapeError, TapeError


def p64(x, name="x"):
    return ag.parameter(np.asarray(x, dtype=np.float64), name=name, dtype=np.float64)


def grads_of(f, *params):
    with ag.Tape() as tape:
        loss = f()
    g = ag.backward(loss, tape)
    return [g[p] for p in params]


# ---- matmul ---------------------------------------------------------------


def test_matmul_identity():
    a = ag.tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(ag.matmul(ag.tensor(np.eye(2)), a).data, [[1, 2], [3, 4]])


def test_matmul_hand_value():
    assert ag.matmul(ag.tensor([[1, 2]]), ag.tensor([[3], [4]])).data.tolist() == [[11]]


def test_matmul_zero():
    out = ag.matmul(ag.tensor(np.zeros((2, 3))), ag.tensor(np.arange(6).reshape(3, 2)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 2)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ag.matmul(ag.tensor(np.zeros((2, 3))), ag.tensor(np.zeros((2, 2))))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_matmul_associative(m, k, l, n, seed):
    rng = np.random.default_rng(seed)
    with ag.precision(np.float64):
        a, b, c = (ag.tensor(rng.uniform(-1, 1, s)) for s in [(m, k), (k, l), (l, n)])
        left = ag.matmul(ag.matmul(a, b), c).data
        right = ag.matmul(a, ag.matmul(b, c)).data
    np.testing.assert_allclose(left, right, atol=1e-10)


# ---- softmax --------------------------------------------------------------


def test_softmax_examples():
    with ag.precision(np.float64):
        np.testing.assert_allclose(ag.softmax_rows(ag.tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
        assert ag.softmax_rows(ag.tensor([[7.3]])).data.tolist() == [[1.0]]
        np.testing.assert_allclose(ag.softmax_rows(ag.tensor([[math.log(3), 0.0]])).data, [[0.75, 0.25]])


def test_softmax_mask_zeroes_and_degenerate_row():
    y = ag.softmax_rows(ag.tensor([[1.0, 2.0, 3.0]]), np.array([[True, False, True]]))
    assert y.data[0, 1] == 0.0
    assert abs(y.data.sum() - 1) < 1e-6
    with pytest.raises(DegenerateMaskError):
        ag.softmax_rows(ag.tensor([[1.0, 2.0], [0.0, 0.0]]), np.array([[True, True], [False, False]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(-50, 50), st.integers(0, 2**31))
def test_softmax_shift_invariant_and_normalized(r, c, shift, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(r, c)) * 5
    with ag.precision(np.float64):
        y0 = ag.softmax_rows(ag.tensor(x)).data
        y1 = ag.softmax_rows(ag.tensor(x + shift)).data
    np.testing.assert_allclose(y0, y1, atol=1e-6)
    assert (y0 >= 0).all()
    np.testing.assert_allclose(y0.sum(axis=-1), 1.0, atol=1e-6)


# ---- layer norm -----------------------------------------------------------


def test_layer_norm_examples():
    with ag.precision(np.float64):
        one, zero = ag.tensor(np.ones(3)), ag.tensor(np.zeros(3))
        np.testing.assert_allclose(ag.layer_norm(ag.tensor([[2.0, 2.0, 2.0]]), one, zero).data, 0.0)
        y = ag.layer_norm(ag.tensor([[1.0, -1.0]]), ag.tensor([1.0, 1.0]), ag.tensor([0.0, 0.0]), eps=1e-12)
        np.testing.assert_allclose(y.data, [[1.0, -1.0]], atol=1e-9)
        bias = ag.tensor([0.5, -2.0, 3.0])
        y = ag.layer_norm(ag.tensor([[9.0, 1.0, -4.0], [0.1, 0.2, 0.3]]), zero, bias)
        np.testing.assert_array_equal(y.data, np.tile(bias.data, (2, 1)))


def test_layer_norm_moments():
    rng = np.random.default_rng(0)
    with ag.precision(np.float64):
        y = ag.layer_norm(ag.tensor(rng.normal(3, 7, (5, 16))), ag.tensor(np.ones(16)),
                          ag.tensor(np.zeros(16)), eps=1e-12)
    np.testing.assert_allclose(y.data.mean(-1), 0, atol=1e-5)
    np.testing.assert_allclose(y.data.var(-1), 1, atol=1e-5)


def test_layer_norm_rejects_bad_gain():
    with pytest.raises(ShapeError):
        ag.layer_norm(ag.tensor(np.ones((2, 3))), ag.tensor(np.ones(2)), ag.tensor(np.zeros(3)))


# ---- norms ----------------------------------------------------------------


def test_frobenius_examples():
    assert ag.frobenius_norm(ag.tensor([3.0, 4.0])).item() == pytest.approx(5.0)
    assert ag.frobenius_norm(ag.tensor(np.zeros((2, 2)))).item() == 0.0
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert ag.frobenius_norm(ag.tensor(2.5 * x)).item() == pytest.approx(2.5 * ag.frobenius_norm(ag.tensor(x)).item())


def test_frobenius_gradient_zero_at_origin():
    x = p64(np.zeros(3))
    (g,) = grads_of(lambda: ag.frobenius_norm(x), x)
    np.testing.assert_array_equal(g, 0.0)


# ---- backward -------------------------------------------------------------


def test_backward_examples():
    x = p64([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(grads_of(lambda: ag.sum(x), x)[0], [1, 1, 1])
    y = p64(3.0)
    assert grads_of(lambda: ag.square(y), y)[0] == 6.0
    z = p64([3.0, 4.0])
    np.testing.assert_allclose(grads_of(lambda: ag.square(ag.frobenius_norm(z)), z)[0], [6.0, 8.0])


def test_backward_sets_grad_attribute_and_zero_for_unused():
    x, unused = p64([1.0, 2.0]), p64([5.0], "u")
    with ag.Tape() as tape:
        loss = ag.sum(ag.square(x)) + ag.scale(ag.sum(unused), 0.0)
    ag.backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    assert unused.grad.shape == unused.shape


def test_backward_errors():
    x = p64([1.0, 2.0])
    with ag.Tape() as tape:
        v = ag.square(x)
    with pytest.raises(TapeError, match="scalar"):
        ag.backward(v, tape)
    with ag.Tape() as tape:
        loss = ag.sum(ag.square(x))
    ag.backward(loss, tape)
    with pytest.raises(TapeError, match="stale"):
        ag.backward(loss, tape)
    with ag.Tape() as other:
        ag.sum(x)
    with pytest.raises(TapeError):
        ag.backward(loss, other)


def test_backward_visits_entries_in_reverse():
    x = p64(2.0)
    order = []
    with ag.Tape() as tape:
        a = ag.square(x)
        b = ag.scale(a, 3.0)
        c = ag.neg(b)
    for e in tape.entries:
        fn = e.backward
        e.backward = (lambda fn, out: lambda g: (order.append(out), fn(g))[1])(fn, e.out)
    ag.backward(c, tape)
    assert order == [c, b, a]


def test_broadcast_is_trailing_only():
    a = ag.tensor(np.ones((2, 3)))
    ag.add(a, ag.tensor(np.ones(3)))
    with pytest.raises(ShapeError):
        ag.add(a, ag.tensor(np.ones((2, 1))))
    with pytest.raises(ShapeError):
        ag.mul(a, ag.tensor(np.ones(2)))


def test_tensor_rejects_empty_dims():
    with pytest.raises(ShapeError):
        ag.tensor(np.zeros((0, 3)))


def test_dropout_identity_without_rng_and_seeded_otherwise():
    x = ag.tensor(np.ones((4, 8)))
    assert ag.dropout(x, 0.5, None) is x
    a = ag.dropout(x, 0.5, np.random.default_rng(3)).data
    b = ag.dropout(x, 0.5, np.random.default_rng(3)).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}


def test_forward_backward_deterministic():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 5))

    def run():
        p = p64(w)
        with ag.Tape() as tape:
            loss = ag.sum(ag.softmax_rows(ag.matmul(p, p)))
        return loss.data.tobytes(), ag.backward(loss, tape)[p].tobytes()

    assert run() == run()


def test_precision_modes():
    assert ag.tensor([1.0]).dtype == np.float32
    with ag.precision(np.float64):
        assert ag.tensor([1.0]).dtype == np.float64
    assert ag.get_default_dtype() == np.float32


# ---- grad_check -----------------------------------------------------------

OPS = {
    "matmul": lambda a, b: ag.sum(ag.square(ag.matmul(a, ag.transpose(b, (1, 0))))),
    "add_mul": lambda a, b: ag.sum(ag.mul(ag.add(a, b), b)),
    "softmax": lambda a, b: ag.sum(ag.mul(ag.softmax_rows(a), b)),
    "layer_norm": lambda a, b: ag.sum(ag.mul(ag.layer_norm(a, ag.getitem(b, 0), ag.getitem(b, 1)), b)),
    "frobenius": lambda a, b: ag.frobenius_norm(ag.sub(a, b)),
    "row_norms": lambda a, b: ag.sum(ag.row_norms(ag.add(a, b))),
    "relu": lambda a, b: ag.sum(ag.mul(ag.relu(a), b)),
    "reciprocal": lambda a, b: ag.sum(ag.reciprocal(ag.add(ag.square(a), ag.tensor(1.0, dtype=np.float64)))),
    "concat_reshape": lambda a, b: ag.sum(ag.square(ag.reshape(ag.concat([a, b], axis=0), (-1,)))),
    "expand_mean": lambda a, b: ag.mean(ag.mul(ag.expand(ag.getitem(a, slice(0, 1)), b.shape), b)),
    "cross_entropy": lambda a, b: ag.smoothed_cross_entropy(
        ag.add(a, b), np.zeros(a.shape[0], dtype=np.int64), 0.1, np.ones(a.shape[0])),
}


@pytest.mark.parametrize("op", sorted(OPS))
@settings(max_examples=8, deadline=None)
@given(r=st.integers(2, 8), c=st.integers(2, 8), seed=st.integers(0, 2**31))
def test_op_gradients_match_finite_differences(op, r, c, seed):
    rng = np.random.default_rng(seed)
    a = p64(rng.normal(size=(r, c)), "a")
    b = p64(rng.normal(size=(r, c)), "b")
    if op == "relu":  # keep away from the kink
        a.data = np.where(np.abs(a.data) < 1e-3, 0.5, a.data)
    rep = ag.grad_check(lambda: OPS[op](a, b), {"a": a, "b": b}, step=1e-5, rel_tol=1e-4)
    assert rep.passed, rep.summary()


def test_take_gradient_accumulates_repeats():
    table = p64(np.arange(6.0).reshape(3, 2))
    (g,) = grads_of(lambda: ag.sum(ag.take(table, np.array([0, 2, 0]))), table)
    np.testing.assert_array_equal(g, [[2, 2], [0, 0], [1, 1]])


def test_grad_check_quadratic_passes():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(4, 4))
    A = A @ A.T
    x = p64(rng.normal(size=(4, 1)))
    At = ag.tensor(A, dtype=np.float64)
    f = lambda: ag.sum(ag.mul(x, ag.matmul(At, x)))
    assert ag.grad_check(f, [x], step=1e-5, rel_tol=1e-4).passed


def test_grad_check_flags_corrupted_gradient():
    x = p64([0.3, -1.2, 2.0])
    f = lambda: ag.sum(ag.square(ag.square(x)))
    good = 4 * x.data ** 3
    assert ag.grad_check(f, {"x": x}, analytic={"x": good}).passed
    rep = ag.grad_check(f, {"x": x}, analytic={"x": good * 1.1})
    assert not rep.passed
    assert rep.failures["x"] == 3


def test_grad_check_requires_float64():
    with pytest.raises(TypeError):
        ag.grad_check(lambda: None, [ag.parameter([1.0])])


def test_grad_check_non_finite_probe():
    x = p64([1e-6])
    with pytest.raises(NumericError):
        ag.grad_check(lambda: ag.sum(ag.reciprocal(ag.sub(x, ag.tensor(1e-6 + 1e-5, dtype=np.float64)))),
                      [x], step=1e-5)
