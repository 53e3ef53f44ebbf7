"""Minimal reverse-mode differentiation over numpy arrays.

Only the primitives the learners need are provided: affine maps, elementwise
nonlinearities, reductions, concatenation/slicing and an elementwise minimum.
Every node remembers the name of the operation that produced it so that a
non-finite loss can be traced back to the first offending operation.
"""
from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, where: str = "forward"):
        super().__init__(f"non-finite value produced by '{op}' during {where} pass")
        self.op = op


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf", requires_grad=False):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add(self, -other)
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"


def param(value) -> Var:
    return Var(value, requires_grad=True)


def const(value) -> Var:
    return Var(value)


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(value, parents, backward_fn, op):
    return Var(value, tuple(parents), backward_fn, op)


# --- primitives -------------------------------------------------------------

def add(a, b) -> Var:
    if isinstance(b, (int, float)):
        return _node(a.value + float(b), (a,), lambda g: (g,), "add")
    if isinstance(a, (int, float)):
        return add(b, a)
    a, b = _wrap(a), _wrap(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def neg(a) -> Var:
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Var:
    # python scalars stay weakly typed so float32 graphs are not promoted
    if isinstance(b, (int, float)):
        b = float(b)
        return _node(a.value * b, (a,), lambda g: (g * b,), "mul")
    if isinstance(a, (int, float)):
        return mul(b, a)
    a, b = _wrap(a), _wrap(b)
    def backward(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.value * b.value, (a, b), backward, "mul")


def matmul(a, b) -> Var:
    """``a @ b`` for 2-D operands or stacks of matrices with a shared leading axis."""
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.value @ b.value, (a, b), backward, "matmul")


def affine(x, w, b) -> Var:
    """``x @ w + b`` as a single node; gradients are only formed for inputs that need them."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    out = x.value @ w.value
    out += b.value

    def backward(g):
        gx = _unbroadcast(g @ np.swapaxes(w.value, -1, -2), x.shape) if x.requires_grad else None
        gw = _unbroadcast(np.swapaxes(x.value, -1, -2) @ g, w.shape) if w.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return gx, gw, gb

    return _node(out, (x, w, b), backward, "affine")


def relu(a) -> Var:
    out = np.maximum(a.value, 0)
    return _node(out, (a,), lambda g: (np.where(out > 0, g, 0).astype(g.dtype, copy=False),), "relu")


def tanh(a) -> Var:
    t = np.tanh(a.value)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a) -> Var:
    e = np.exp(a.value)
    return _node(e, (a,), lambda g: (g * e,), "exp")


def log(a) -> Var:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return _node(out, (a,), lambda g: (g / a.value,), "log")


def square(a) -> Var:
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,), "square")


def softplus(a, sharpness: float = 1.0) -> Var:
    """``log(1 + exp(sharpness * x)) / sharpness``."""
    z = a.value * sharpness
    e = np.exp(-np.abs(z))
    out = (np.maximum(z, 0) + np.log1p(e)) / sharpness
    inv = 1.0 / (1.0 + e)
    sig = np.where(z >= 0, inv, e * inv)
    return _node(out, (a,), lambda g: (g * sig,), "softplus")


def clip(a, lo: float, hi: float) -> Var:
    mask = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,), "clip")


def minimum(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    pick_a = a.value <= b.value
    return _node(np.where(pick_a, a.value, b.value), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)), "minimum")


def sum(a, axis=None, keepdims=False) -> Var:  # noqa: A001 - mirrors numpy naming
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Var:
    n = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def concat(parts, axis=-1) -> Var:
    parts = [_wrap(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), parts, backward, "concat")


def getitem(a, idx) -> Var:
    def backward(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g) if _fancy(idx) else out.__setitem__(idx, g)
        return (out,)

    return _node(a.value[idx], (a,), backward, "getitem")


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(a, shape) -> Var:
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def gaussian_log_density(x, mean_, log_std) -> Var:
    """Elementwise log N(x; mean, exp(log_std)^2)."""
    z = mul(add(x, neg(mean_)), exp(neg(log_std)))
    return add(add(mul(square(z), -0.5), neg(log_std)), float(-0.5 * np.log(2.0 * np.pi)))


# --- backward pass ----------------------------------------------------------

def _toposort(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _all_toposort(root: Var) -> list[Var]:
    """Every node reachable from ``root``, inputs before the nodes that consume them."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents)
    return order


def first_nonfinite(root: Var) -> str | None:
    for node in _all_toposort(root):
        if not np.all(np.isfinite(node.value)):
            return node.op
    return None


def gradient(loss: Var, params: list[Var]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each of ``params``.

    Raises :class:`NonFiniteError` naming the first operation whose output is
    not finite, either in the loss graph or in the propagated gradients.
    """
    if loss.value.size != 1:
        raise ValueError("gradient() needs a scalar loss")
    if not np.isfinite(loss.value).all():
        raise NonFiniteError(first_nonfinite(loss) or loss.op)
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node.backward_fn is None:
            if g is not None:
                grads[id(node)] = g  # leaf: keep for collection
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    out = []
    for p in params:
        g = grads.get(id(p))
        if g is None:
            g = np.zeros_like(p.value)
        elif not np.all(np.isfinite(g)):
            raise NonFiniteError(p.op, where="backward")
        out.append(np.asarray(g, dtype=p.value.dtype).reshape(p.shape))
    return out
