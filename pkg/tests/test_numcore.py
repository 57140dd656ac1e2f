import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lslolab import numcore as nc
from oracles import oracle_gradient


def _rand(rng, *shape):
    return rng.normal(size=shape)


def _grad_vs_oracle(build, arrays, tol=1e-7):
    """Compare the tape gradient of ``build(*tensors)`` with central differences."""
    tensors = [nc.Tensor(a.copy(), requires_grad=True) for a in arrays]
    nc.backward(build(*tensors))
    work = [a.copy() for a in arrays]

    def f(*arrs):
        with nc.no_grad():
            return build(*[nc.Tensor(x) for x in arrs]).item()

    numeric = oracle_gradient(f, work)
    for t, n in zip(tensors, numeric):
        np.testing.assert_allclose(t.grad.reshape(-1), n, atol=tol, rtol=tol)


OPS = {
    "add_broadcast": (lambda a, b: nc.sum(nc.mul(nc.add(a, b), a)), [(3, 4), (4,)]),
    "sub": (lambda a, b: nc.sum(nc.mul(nc.sub(a, b), nc.sub(a, b))), [(2, 3), (2, 3)]),
    "exp_log": (lambda a: nc.sum(nc.log(nc.add(nc.exp(a), 1.0))), [(5,)]),
    "tanh": (lambda a: nc.sum(nc.tanh(a)), [(2, 3)]),
    "gelu": (lambda a: nc.sum(nc.mul(nc.gelu(a), a)), [(6,)]),
    "matmul_batched": (lambda a, b: nc.sum(nc.tanh(nc.matmul(a, b))), [(2, 3, 4), (2, 4, 2)]),
    "linear_bias": (lambda x, w, b: nc.sum(nc.tanh(nc.linear(x, w, b))), [(3, 4), (5, 4), (5,)]),
    "softmax": (lambda a, w: nc.sum(nc.mul(nc.softmax(a), w)), [(2, 5), (2, 5)]),
    "log_softmax": (lambda a, w: nc.sum(nc.mul(nc.log_softmax(a, axis=0), w)), [(4, 3), (4, 3)]),
    "layer_norm": (lambda x, g, b, w: nc.sum(nc.mul(nc.layer_norm(x, g, b), w)), [(3, 6), (6,), (6,), (3, 6)]),
    "mean_axis": (lambda a: nc.sum(nc.mul(nc.mean(a, axis=1), nc.mean(a, axis=1))), [(3, 4)]),
    "transpose_reshape": (
        lambda a, w: nc.sum(nc.mul(nc.reshape(nc.transpose(a, (1, 0, 2)), (3, 8)), w)),
        [(2, 3, 4), (3, 8)],
    ),
    "getitem": (lambda a: nc.sum(nc.mul(nc.getitem(a, (slice(None), 1)), nc.getitem(a, (slice(None), 2)))), [(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_central_differences(name):
    build, shapes = OPS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    _grad_vs_oracle(build, [_rand(rng, *s) for s in shapes])


def test_cross_entropy_gradient_ignores_pad():
    rng = np.random.default_rng(0)
    targets = np.array([[2, 1, 0], [3, 0, 0]])
    _grad_vs_oracle(lambda z: nc.cross_entropy(z, targets, pad_id=0), [_rand(rng, 2, 3, 5)])
    logits = nc.Tensor(_rand(rng, 2, 3, 5), requires_grad=True)
    nc.backward(nc.cross_entropy(logits, targets, pad_id=0))
    assert np.all(logits.grad[targets == 0] == 0.0)


def test_cross_entropy_value():
    logits = nc.Tensor(np.log(np.array([[0.5, 0.25, 0.25]])))
    assert nc.cross_entropy(logits, np.array([0])).item() == pytest.approx(np.log(2.0))


def test_embedding_scatter_add():
    w = nc.Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = nc.embedding(w, np.array([[1, 1], [3, 0]]))
    nc.backward(nc.sum(out))
    np.testing.assert_array_equal(w.grad[:, 0], [1.0, 2.0, 0.0, 1.0])


def test_masked_fill_blocks_gradient():
    a = nc.Tensor(np.ones((2, 2)), requires_grad=True)
    mask = np.array([[True, False], [False, False]])
    nc.backward(nc.sum(nc.masked_fill(a, mask, -5.0)))
    np.testing.assert_array_equal(a.grad, [[0.0, 1.0], [1.0, 1.0]])


def test_shared_node_gradients_accumulate():
    a = nc.Tensor(np.array([3.0]), requires_grad=True)
    b = nc.mul(a, a)
    nc.backward(nc.sum(nc.add(b, b)))
    assert a.grad[0] == 12.0


def test_backward_accumulates_across_calls_and_reports_unused():
    a = nc.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    unused = nc.Tensor(np.zeros(3), requires_grad=True)
    nc.backward(nc.sum(a), [a, unused])
    store = nc.backward(nc.sum(a), [a, unused])
    np.testing.assert_array_equal(a.grad, [2.0, 2.0])
    assert unused.grad is None
    np.testing.assert_array_equal(store[unused], np.zeros(3))


def test_no_grad_records_nothing():
    a = nc.Tensor(np.ones(2), requires_grad=True)
    with nc.no_grad():
        out = nc.mul(a, 2.0)
    assert not out.requires_grad
    assert out._parents == ()


def test_matmul_dimension_error():
    with pytest.raises(nc.DimensionError):
        nc.matmul(nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones((4, 2))))


def test_non_finite_forward_raises():
    with pytest.raises(nc.NumericalError):
        nc.log(nc.Tensor(np.array([-1.0])))
    with pytest.raises(nc.NumericalError):
        nc.exp(nc.Tensor(np.array([1000.0])))


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        nc.backward(nc.Tensor(np.ones(2), requires_grad=True))


def test_softmax_extreme_inputs_stay_finite():
    out = nc.softmax(nc.Tensor(np.array([1e4, -1e4, 0.0])))
    assert np.isclose(out.data.sum(), 1.0)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=8))
def test_log_softmax_normalises(xs):
    out = nc.log_softmax(nc.Tensor(np.array(xs)))
    assert np.exp(out.data).sum() == pytest.approx(1.0, abs=1e-12)


def test_fd_check_validates_eps_and_determinism():
    a = nc.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    f = lambda: nc.sum(nc.mul(a, a))  # noqa: E731
    for bad in (0.0, -1e-6, 1e-2):
        with pytest.raises(ValueError):
            nc.finite_difference_check(f, [a], eps=bad)
    assert nc.finite_difference_check(f, [a]) < 1e-8
    counter = {"n": 0}

    def flaky():
        counter["n"] += 1
        return nc.sum(nc.mul(a, float(counter["n"])))

    with pytest.raises(nc.OracleError):
        nc.finite_difference_check(flaky, [a])


def test_tape_visits_each_node_once():
    a = nc.Tensor(np.ones(2), requires_grad=True)
    b = nc.mul(a, a)
    c = nc.add(b, b)
    tape = nc.Tape(nc.sum(c))
    assert len(tape) == len({id(n) for n in tape.nodes}) == 4
