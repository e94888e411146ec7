import numpy as np
import pytest

from krgnn import autodiff as ad
from krgnn.errors import InvalidArgumentError

from _fd import TOL, check, projected

INSTANCES = range(50)


def _leaf(rng, *shape):
    return ad.param(rng.standard_normal(shape))


def _away_from_zero(rng, *shape):
    # keeps FD steps off the relu/elu kink
    x = rng.standard_normal(shape)
    return ad.param(np.where(np.abs(x) < 1e-3, 0.5, x))


def _fixed_weights(rng, node_fn):
    seed = int(rng.integers(2**31))
    return lambda: projected(node_fn(), np.random.default_rng(seed))


OPS = {
    "add": lambda rng: (lambda a, b: (lambda: ad.add(a, b), [a, b]))(
        _leaf(rng, 3, 4), _leaf(rng, 4)),
    "scale": lambda rng: (lambda a: (lambda: ad.scale(a, -1.7), [a]))(_leaf(rng, 2, 3)),
    "mul_const": lambda rng: (lambda a, c: (lambda: ad.mul_const(a, c), [a]))(
        _leaf(rng, 3, 2), rng.standard_normal((3, 2))),
    "matmul": lambda rng: (lambda a, b: (lambda: ad.matmul(a, b), [a, b]))(
        _leaf(rng, 3, 4), _leaf(rng, 4, 2)),
    "concat_cols": lambda rng: (lambda a, b: (lambda: ad.concat_cols([a, b]), [a, b]))(
        _leaf(rng, 3, 2), _leaf(rng, 3, 3)),
    "gather_rows": lambda rng: (lambda a, idx: (lambda: ad.gather_rows(a, idx), [a]))(
        _leaf(rng, 4, 2), rng.integers(0, 4, size=6)),
    "relu": lambda rng: (lambda a: (lambda: ad.relu(a), [a]))(_away_from_zero(rng, 3, 3)),
    "elu": lambda rng: (lambda a: (lambda: ad.elu(a), [a]))(_away_from_zero(rng, 3, 3)),
}


@pytest.mark.parametrize("op", sorted(OPS))
def test_op_vjp_matches_finite_differences(op):
    worst = 0.0
    for i in INSTANCES:
        rng = np.random.default_rng(1000 + i)
        node_fn, leaves = OPS[op](rng)
        worst = max(worst, check(_fixed_weights(rng, node_fn), leaves))
    assert worst < TOL


def test_sum_and_total():
    rng = np.random.default_rng(0)
    a, b = _leaf(rng, 2, 2), _leaf(rng, 3)
    assert check(lambda: ad.total([ad.sum_all(a), ad.scale(ad.sum_all(b), 2.0)]), [a, b]) < TOL


def test_operator_overloads():
    a = ad.param([[1.0, 2.0]])
    b = ad.param([[3.0], [4.0]])
    out = (a @ b) * 2.0 - a @ b + 1.0
    assert out.value.item() == 12.0
    ga, gb = ad.backward(ad.sum_all(out), [a, b])
    np.testing.assert_allclose(ga, [[3.0, 4.0]])
    np.testing.assert_allclose(gb, [[1.0], [2.0]])
    assert float((-a).value.sum()) == -3.0


def test_shared_subexpression_accumulates():
    # y = x*x via a matmul sharing the same leaf twice
    x = ad.param([[3.0]])
    loss = ad.sum_all(ad.matmul(x, x))
    (g,) = ad.backward(loss, [x])
    assert g.tolist() == [[6.0]]


def test_each_node_visited_once():
    calls = []
    x = ad.param(np.ones((2, 2)))

    def counted(node):
        def vjp(g):
            calls.append(node)
            return (g,)
        return ad.make_node(node.value, (node,), vjp, "count")

    shared = counted(x)
    loss = ad.sum_all(ad.add(ad.relu(shared), ad.elu(shared)))
    ad.backward(loss, [x])
    assert len(calls) == 1


def test_backward_resets_between_calls():
    x = ad.param([1.0, 2.0])
    loss = ad.sum_all(ad.scale(x, 3.0))
    ad.backward(loss, [x])
    (g,) = ad.backward(loss, [x])
    assert g.tolist() == [3.0, 3.0]
    (g,) = ad.backward(loss, [x], accumulate=True)
    assert g.tolist() == [6.0, 6.0]


def test_backward_needs_scalar():
    with pytest.raises(InvalidArgumentError):
        ad.backward(ad.param(np.ones(3)))


def test_unrelated_leaf_gets_zero():
    x, y = ad.param([1.0]), ad.param([5.0])
    y.grad = np.array([9.0])
    _, gy = ad.backward(ad.sum_all(x), [x, y])
    assert gy.tolist() == [0.0]


def test_constants_do_not_track():
    out = ad.add(np.ones(2), np.ones(2))
    assert not out.requires_grad and out.vjp is None
    assert ad.backward(ad.sum_all(out), []) == []


def test_detach_cuts_gradient():
    x = ad.param([2.0])
    loss = ad.sum_all(ad.add(x, x.detach()))
    (g,) = ad.backward(loss, [x])
    assert g.tolist() == [1.0]


def test_matmul_shape_error():
    with pytest.raises(InvalidArgumentError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_concat_row_mismatch():
    with pytest.raises(InvalidArgumentError):
        ad.concat_cols([np.ones((2, 1)), np.ones((3, 1))])


def test_unknown_activation():
    with pytest.raises(InvalidArgumentError, match="relu"):
        ad.activation("tanh")


def test_deep_chain_is_not_recursive():
    x = ad.param([1.0])
    h = x
    for _ in range(5000):
        h = ad.scale(h, 1.0)
    (g,) = ad.backward(ad.sum_all(h), [x])
    assert g.tolist() == [1.0]
