"""Minimal reverse-mode differentiation over dense float64 arrays.

Only the op vocabulary needed by the encoders and losses is provided:
matmul, add (with row broadcasting), scalar/constant products, column
concatenation, row gathering, elementwise activations and reductions.
Custom ops with hand-written vector-Jacobian products are registered through
:func:`make_node` (cross-entropy and the ridge KR loss use it).
"""

import itertools

import numpy as np

from .errors import InvalidArgumentError

_ids = itertools.count()


class DiffValue:
    """A node in the computation tape: payload ``value`` plus adjoint ``grad``."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "vjp", "id", "name")

    def __init__(self, value, requires_grad=False, parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.vjp = vjp
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def detach(self):
        return DiffValue(self.value.copy())

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"DiffValue{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul_const(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def param(value, name=None):
    """A trainable leaf."""
    return DiffValue(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_diff(x):
    return x if isinstance(x, DiffValue) else DiffValue(x)


def make_node(value, parents, vjp, name=None):
    """Register an op output. ``vjp(g)`` returns one gradient (or None) per parent."""
    parents = tuple(as_diff(p) for p in parents)
    requires_grad = any(p.requires_grad for p in parents)
    return DiffValue(value, requires_grad=requires_grad, parents=parents,
                     vjp=vjp if requires_grad else None, name=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_diff(a), as_diff(b)
    sa, sb = a.shape, b.shape
    return make_node(a.value + b.value, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def scale(a, c):
    a = as_diff(a)
    return make_node(c * a.value, (a,), lambda g: (c * g,), "scale")


def mul_const(a, c):
    """Elementwise product with a constant array (dropout masks, weights)."""
    a = as_diff(a)
    c = np.asarray(c.value if isinstance(c, DiffValue) else c, dtype=np.float64)
    sa = a.shape
    return make_node(a.value * c, (a,), lambda g: (_unbroadcast(g * c, sa),), "mul")


def matmul(a, b):
    a, b = as_diff(a), as_diff(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise InvalidArgumentError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    return make_node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def concat_cols(parts):
    parts = [as_diff(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise InvalidArgumentError(f"concat row mismatch: {[p.shape for p in parts]}")
    splits = np.cumsum([p.shape[1] for p in parts])[:-1]
    return make_node(np.concatenate([p.value for p in parts], axis=1), parts,
                     lambda g: tuple(np.split(g, splits, axis=1)), "concat")


def gather_rows(a, index):
    a = as_diff(a)
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return make_node(a.value[index], (a,), vjp, "gather")


def relu(a):
    a = as_diff(a)
    mask = a.value > 0
    return make_node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def elu(a, alpha=1.0):
    a = as_diff(a)
    x = a.value
    neg = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    deriv = np.where(x > 0, 1.0, neg + alpha)
    return make_node(out, (a,), lambda g: (g * deriv,), "elu")


def identity(a):
    return as_diff(a)


ACTIVATIONS = {"relu": relu, "elu": elu, "identity": identity}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


def sum_all(a):
    a = as_diff(a)
    shape = a.shape
    return make_node(a.value.sum(), (a,), lambda g: (np.full(shape, g),), "sum")


def total(values):
    """Sum of scalar nodes as a single tape entry."""
    values = [as_diff(v) for v in values]
    if not values:
        return DiffValue(0.0)
    return make_node(sum(v.value for v in values), values,
                     lambda g: tuple(g for _ in values), "total")


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss, leaves=(), accumulate=False):
    """Populate adjoints of every node upstream of the scalar ``loss``.

    Intermediate adjoints are always reset. Leaf adjoints are reset too unless
    ``accumulate`` is set; ``leaves`` that never reach the loss end up zero.
    Returns the gradients of ``leaves`` in order.
    """
    if loss.value.size != 1:
        raise InvalidArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    leaves = list(leaves)
    if not accumulate:
        for leaf in leaves:
            leaf.zero_grad()
    if not loss.requires_grad:
        return [leaf.grad for leaf in leaves]

    order = _topological(loss)
    for node in order:
        if node.parents or not accumulate:
            node.zero_grad()
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is not None and parent.requires_grad:
                parent.grad = parent.grad + np.reshape(g, parent.shape)
    return [leaf.grad for leaf in leaves]
