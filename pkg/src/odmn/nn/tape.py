"""Reverse-mode differentiation over dense float64 arrays.

Values are plain numpy arrays wrapped in :class:`Node`. Operations executed
while a :class:`Tape` is active are recorded in creation order, which is
already a topological order, so the backward pass is a single reverse sweep.

    with Tape() as tape:
        loss = ops.mean(ops.square(layer(x) - y))
    grads = tape.backward(loss)   # {Parameter: ndarray}
"""
from __future__ import annotations

import threading

import numpy as np

from .. import kernels
from ..errors import DimensionError, StateError

_local = threading.local()


def current_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Parameter:
    """A named learnable tensor.

    ``nonnegative`` marks tensors that the optimizer projects onto ``>= 0``;
    ``group`` selects the learning-rate group ("embedding" or "dense").
    """

    __slots__ = ("value", "name", "nonnegative", "group")

    def __init__(self, value, name, nonnegative=False, group="dense"):
        self.value = np.array(value, dtype=np.float64)
        self.name = name
        self.nonnegative = nonnegative
        self.group = group

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    __slots__ = ("value", "parents", "requires_grad", "grad", "tape", "param")

    def __init__(self, value, parents=(), requires_grad=False, tape=None, param=None):
        self.value = value
        self.parents = parents
        self.requires_grad = requires_grad
        self.grad = None
        self.tape = tape
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Node(shape={np.shape(self.value)}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, cols):
        return take_cols(self, cols)


class Tape:
    def __init__(self):
        self.nodes = []
        self._leaves = {}
        self._consumed = False

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def watch(self, param):
        node = self._leaves.get(id(param))
        if node is None:
            node = Node(param.value, requires_grad=True, tape=self, param=param)
            self._leaves[id(param)] = node
        return node

    @property
    def parameters(self):
        return [n.param for n in self._leaves.values()]

    def backward(self, loss, loss_grad=1.0):
        """Gradients of ``loss`` with respect to every parameter touched on this tape."""
        if not isinstance(loss, Node) or loss.tape is not self:
            raise StateError("backward() needs a value recorded on this tape")
        if self._consumed:
            raise StateError("tape already consumed by a previous backward()")
        self._consumed = True
        loss.grad = np.broadcast_to(np.asarray(loss_grad, dtype=np.float64), np.shape(loss.value)).copy()
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            for parent, fn in node.parents:
                if not parent.requires_grad:
                    continue
                contrib = fn(g)
                if parent.grad is None:
                    parent.grad = np.array(contrib, dtype=np.float64)
                else:
                    parent.grad += contrib
        out = {}
        for leaf in self._leaves.values():
            out[leaf.param] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.param.value)
        return out


def backward(loss, loss_grad=1.0):
    """Run the backward sweep on the tape that recorded ``loss``."""
    tape = getattr(loss, "tape", None)
    if tape is None:
        raise StateError("no recorded tape: run the forward pass inside `with Tape():`")
    return tape.backward(loss, loss_grad)


def as_node(x):
    if isinstance(x, Node):
        return x
    if isinstance(x, Parameter):
        tape = current_tape()
        if tape is not None:
            return tape.watch(x)
        return Node(x.value)
    return Node(np.asarray(x, dtype=np.float64))


def _result(value, parents):
    """Build an op output; ``parents`` is a list of (node, grad_fn)."""
    live = [(p, fn) for p, fn in parents if p.requires_grad]
    tape = current_tape()
    if live and tape is not None:
        node = Node(value, tuple(live), True, tape)
        tape.nodes.append(node)
        return node
    return Node(value)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = np.shape(a.value), np.shape(b.value)
    return _result(a.value + b.value, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))])


def sub(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = np.shape(a.value), np.shape(b.value)
    return _result(a.value - b.value, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))])


def mul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    sa, sb = np.shape(av), np.shape(bv)
    return _result(av * bv, [(a, lambda g: _unbroadcast(g * bv, sa)), (b, lambda g: _unbroadcast(g * av, sb))])


def square(a):
    a = as_node(a)
    av = a.value
    return _result(av * av, [(a, lambda g: 2.0 * g * av)])


def relu(a):
    a = as_node(a)
    mask = a.value > 0
    return _result(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sigmoid(a):
    a = as_node(a)
    x = a.value
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, [(a, lambda g: g * s * (1.0 - s))])


def softmax(a):
    """Row-wise softmax of a 2-D node."""
    a = as_node(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def grad(g):
        return s * (g - (g * s).sum(axis=1, keepdims=True))

    return _result(s, [(a, grad)])


def log(a, floor=1e-12):
    """Natural log with the argument floored at ``floor`` (no gradient below the floor)."""
    a = as_node(a)
    keep = a.value > floor
    x = np.where(keep, a.value, floor)
    return _result(np.log(x), [(a, lambda g: np.where(keep, g / x, 0.0))])


class FrozenStops:
    """Record the values passing through :func:`stop_gradient`, then replay them.

    In "record" mode every stopped value is saved in call order; in "replay"
    mode the saved values are returned instead of the live ones. The gradient
    checker uses this so finite differences hold stopped values fixed, exactly
    as the tape does.
    """

    def __init__(self):
        self.values = []
        self.mode = "record"
        self._cursor = 0

    def __enter__(self):
        if not hasattr(_local, "stops"):
            _local.stops = []
        _local.stops.append(self)
        self._cursor = 0
        return self

    def __exit__(self, *exc):
        _local.stops.pop()
        return False

    def replay(self):
        self.mode = "replay"
        return self

    def _pass(self, value):
        if self.mode == "record":
            self.values.append(value.copy())
            return value
        if self._cursor >= len(self.values):
            raise StateError("replay ran past the recorded stop-gradient values")
        out = self.values[self._cursor]
        self._cursor += 1
        return out


def stop_gradient(a):
    a = as_node(a)
    stops = getattr(_local, "stops", None)
    if stops:
        return Node(stops[-1]._pass(np.asarray(a.value)))
    return Node(a.value)


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_node(a)
    shape = np.shape(a.value)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _result(np.sum(a.value, axis=axis, keepdims=keepdims), [(a, grad)])


def mean(a):
    a = as_node(a)
    n = a.value.size
    shape = np.shape(a.value)
    return _result(np.mean(a.value), [(a, lambda g: np.full(shape, g / n))])


# ---------------------------------------------------------------- shape ops

def matmul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"cannot multiply {av.shape} by {bv.shape}")
    return _result(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def concat(nodes, axis=1):
    nodes = [as_node(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)
    parents = []
    for i, n in enumerate(nodes):
        lo, hi = int(bounds[i]), int(bounds[i + 1])

        def grad(g, lo=lo, hi=hi):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        parents.append((n, grad))
    return _result(np.concatenate([n.value for n in nodes], axis=axis), parents)


def take_cols(a, cols):
    """Column selection ``a[:, cols]`` for an int, slice or index array."""
    a = as_node(a)
    if isinstance(cols, (int, np.integer)):
        cols = slice(int(cols), int(cols) + 1)
    shape = a.value.shape

    def grad(g):
        out = np.zeros(shape)
        if isinstance(cols, slice):
            out[:, cols] = g
        else:
            np.add.at(out, (slice(None), cols), g)
        return out

    return _result(a.value[:, cols], [(a, grad)])


def take_along_rows(a, idx):
    """``a[i, idx[i]]`` for each row i, as a column vector."""
    a = as_node(a)
    rows = np.arange(a.value.shape[0])
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.value.shape

    def grad(g):
        out = np.zeros(shape)
        out[rows, idx] = g[:, 0]
        return out

    return _result(a.value[rows, idx][:, None], [(a, grad)])


def gather_rows(table, ids):
    """Embedding lookup ``table[ids]``; the backward pass scatter-adds into the table."""
    t = as_node(table)
    ids = np.asarray(ids, dtype=np.int64)
    shape = t.value.shape

    def grad(g):
        out = np.zeros(shape)
        kernels.scatter_add_rows(out, ids, g)
        return out

    return _result(t.value[ids], [(t, grad)])
