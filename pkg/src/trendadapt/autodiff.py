"""Minimal reverse-mode automatic differentiation over numpy values.

The graph is built define-by-run: every operation returns a new `Node`
holding the forward value and a closure that routes the upstream gradient
to its parents. Graphs are small (hundreds of nodes per training step),
so no retained-graph machinery is needed. All arithmetic is float64.
"""
from __future__ import annotations

import numpy as np


class NonFiniteError(RuntimeError):
    """Raised when a non-finite value is found in the computation graph."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Node:
    """One value in the computation graph.

    value   -- forward value (scalar, vector or matrix)
    grad    -- accumulated d(root)/d(self), populated by `backward`
    tag     -- op name, for error messages
    parents -- upstream nodes
    param   -- optional Param this leaf is bound to (see params.ParamStore)
    """

    __slots__ = ("value", "grad", "tag", "parents", "_backward", "param")

    def __init__(self, value, tag="const", parents=(), backward=None, param=None):
        self.value = _as_array(value)
        self.grad = None
        self.tag = tag
        self.parents = parents
        self._backward = backward
        self.param = param

    def _acc(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += _unbroadcast(_as_array(g), self.value.shape)

    # -- operator sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Node({self.tag}, shape={self.value.shape})"


def wrap(x) -> Node:
    return x if isinstance(x, Node) else Node(x, tag="const")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary ops ---------------------------------------------

def add(a, b):
    a, b = wrap(a), wrap(b)
    out = Node(a.value + b.value, "add", (a, b))

    def bwd():
        a._acc(out.grad)
        b._acc(out.grad)

    out._backward = bwd
    return out


def sub(a, b):
    a, b = wrap(a), wrap(b)
    out = Node(a.value - b.value, "sub", (a, b))

    def bwd():
        a._acc(out.grad)
        b._acc(-out.grad)

    out._backward = bwd
    return out


def mul(a, b):
    a, b = wrap(a), wrap(b)
    out = Node(a.value * b.value, "mul", (a, b))

    def bwd():
        a._acc(out.grad * b.value)
        b._acc(out.grad * a.value)

    out._backward = bwd
    return out


def div(a, b):
    a, b = wrap(a), wrap(b)
    out = Node(a.value / b.value, "div", (a, b))

    def bwd():
        a._acc(out.grad / b.value)
        b._acc(-out.grad * a.value / (b.value * b.value))

    out._backward = bwd
    return out


# -- elementwise unary ops ----------------------------------------------

def log(a):
    a = wrap(a)
    out = Node(np.log(a.value), "log", (a,))

    def bwd():
        a._acc(out.grad / a.value)

    out._backward = bwd
    return out


def exp(a):
    a = wrap(a)
    out = Node(np.exp(a.value), "exp", (a,))

    def bwd():
        a._acc(out.grad * out.value)

    out._backward = bwd
    return out


def tanh(a):
    a = wrap(a)
    out = Node(np.tanh(a.value), "tanh", (a,))

    def bwd():
        a._acc(out.grad * (1.0 - out.value * out.value))

    out._backward = bwd
    return out


def square(a):
    a = wrap(a)
    out = Node(a.value * a.value, "square", (a,))

    def bwd():
        a._acc(out.grad * 2.0 * a.value)

    out._backward = bwd
    return out


def sqrt(a):
    a = wrap(a)
    out = Node(np.sqrt(a.value), "sqrt", (a,))

    def bwd():
        a._acc(out.grad * 0.5 / out.value)

    out._backward = bwd
    return out


def softplus(a):
    """log(1 + exp(a)), numerically stable for large |a|."""
    a = wrap(a)
    out = Node(np.logaddexp(0.0, a.value), "softplus", (a,))

    def bwd():
        a._acc(out.grad / (1.0 + np.exp(-a.value)))

    out._backward = bwd
    return out


# -- reductions and structure -------------------------------------------

def vsum(a, axis=None):
    a = wrap(a)
    out = Node(a.value.sum(axis=axis), "sum", (a,))

    def bwd():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._acc(np.broadcast_to(g, a.value.shape))

    out._backward = bwd
    return out


def cumsum(a, axis=0):
    a = wrap(a)
    out = Node(np.cumsum(a.value, axis=axis), "cumsum", (a,))

    def bwd():
        g = np.flip(np.cumsum(np.flip(out.grad, axis=axis), axis=axis), axis=axis)
        a._acc(g)

    out._backward = bwd
    return out


def concat(nodes, axis=0):
    nodes = [wrap(n) for n in nodes]
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), "concat", tuple(nodes))
    sizes = [n.value.shape[axis] for n in nodes]

    def bwd():
        offs = np.cumsum([0] + sizes)
        for n, lo, hi in zip(nodes, offs[:-1], offs[1:]):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(lo, hi)
            n._acc(out.grad[tuple(idx)])

    out._backward = bwd
    return out


def take(a, idx):
    """Row selection along axis 0 (slice or integer index array)."""
    a = wrap(a)
    out = Node(a.value[idx], "take", (a,))

    def bwd():
        g = np.zeros_like(a.value)
        np.add.at(g, idx, out.grad)
        a._acc(g)

    out._backward = bwd
    return out


def reshape(a, shape):
    a = wrap(a)
    out = Node(a.value.reshape(shape), "reshape", (a,))

    def bwd():
        a._acc(out.grad.reshape(a.value.shape))

    out._backward = bwd
    return out


def matmul(a, b):
    a, b = wrap(a), wrap(b)
    out = Node(a.value @ b.value, "matmul", (a, b))

    def bwd():
        a._acc(out.grad @ b.value.T)
        b._acc(a.value.T @ out.grad)

    out._backward = bwd
    return out


def dot(a, b):
    """Inner product of two 1-D vectors."""
    a, b = wrap(a), wrap(b)
    out = Node(np.dot(a.value, b.value), "dot", (a, b))

    def bwd():
        a._acc(out.grad * b.value)
        b._acc(out.grad * a.value)

    out._backward = bwd
    return out


def norm(a):
    """Euclidean norm of a 1-D vector."""
    a = wrap(a)
    out = Node(np.linalg.norm(a.value), "norm", (a,))

    def bwd():
        a._acc(out.grad * a.value / out.value)

    out._backward = bwd
    return out


# -- backward pass -------------------------------------------------------

def _topo_order(root: Node):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Node):
    """Populate grads of every node reachable from `root` (a scalar).

    Leaves bound to a Param also accumulate into the Param's grad slot,
    so repeated calls without zeroing accumulate.
    """
    if root.value.size != 1:
        raise ValueError("backward root must be a scalar")
    order = _topo_order(root)
    for node in order:
        if not np.all(np.isfinite(node.value)):
            raise NonFiniteError(f"non-finite value in op '{node.tag}'")
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
    for node in order:
        if node.param is not None and node.grad is not None:
            node.param.grad += node.grad


def finite_diff_check(loss_fn, store, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` must rebuild the loss graph from the store's current values
    and be deterministic. Relative error is |analytic - numeric| divided
    by max(1, |numeric|), maximized over all trainable scalars.
    """
    store.zero_grad()
    backward(loss_fn())
    analytic = {name: p.grad.copy() for name, p in store.items() if p.trainable}
    max_err = 0.0
    for name, p in store.items():
        if not p.trainable:
            continue
        flat = p.value.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = float(loss_fn().value)
            flat[i] = orig - step
            lm = float(loss_fn().value)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * step)
            err = abs(ana[i] - numeric) / max(1.0, abs(numeric))
            max_err = max(max_err, err)
    return max_err
