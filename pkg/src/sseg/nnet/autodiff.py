"""Minimal dense-tensor reverse-mode automatic differentiation.

A Tensor wraps a float64 ndarray; operations record parent references and a
backward closure, forming the tape replayed by `backward` in reverse
topological order (each node visited exactly once). Gradients accumulate
additively, so the backward of a batch sum equals the sum of per-example
backwards exactly.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar --------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*tensors) -> bool:
    return any(t.requires_grad or t.parents for t in tensors)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the parent's shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, out_data, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(out_data, parents=(a, b))

    def backward_fn(g):
        a._accumulate(_unbroadcast(da(g), a.data.shape))
        b._accumulate(_unbroadcast(db(g), b.data.shape))

    out._backward = backward_fn if _needs_grad(a, b) else None
    if out._backward is None:
        out.parents = ()
    return out


def _unary(a, out_data, da) -> Tensor:
    a = as_tensor(a)
    out = Tensor(out_data, parents=(a,))

    def backward_fn(g):
        a._accumulate(_unbroadcast(da(g), a.data.shape))

    out._backward = backward_fn if _needs_grad(a) else None
    if out._backward is None:
        out.parents = ()
    return out


# -- arithmetic ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data / b.data, lambda g: g / b.data, lambda g: -g * a.data / (b.data**2))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, -a.data, lambda g: -g)


def pow_const(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data**exponent, lambda g: g * exponent * a.data ** (exponent - 1) if exponent != 0 else np.zeros_like(a.data))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _unary(a, out_data, lambda g: g * out_data)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _unary(a, out_data, lambda g: g / (2.0 * out_data))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.abs(a.data), lambda g: g * np.sign(a.data))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    return _unary(a, out_data, lambda g: g * (1.0 - out_data**2))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _unary(a, out_data, lambda g: g * out_data * (1.0 - out_data))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _unary(a, a.data * mask, lambda g: g * mask)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)
    x = a.data
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _unary(a, out_data, lambda g: g * sig)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _unary(a, np.clip(a.data, lo, hi), lambda g: g * mask)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def da(g):
        if a.data.ndim == 1:
            return g @ b.data.T if b.data.ndim == 2 else g * b.data
        return g @ b.data.T if b.data.ndim == 2 else np.outer(g, b.data)

    def db(g):
        if b.data.ndim == 1:
            return a.data.T @ g if a.data.ndim == 2 else a.data * g
        return a.data.T @ g if a.data.ndim == 2 else np.outer(a.data, g)

    return _binary(a, b, out_data, da, db)


# -- reductions ----------------------------------------------------------
def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def da(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()

    return _unary(a, out_data, da)


def tmean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis) * (1.0 / count)


def amax(a, axis: int) -> Tensor:
    """Max along an axis; the gradient routes to the first maximal entry."""
    a = as_tensor(a)
    out_data = a.data.max(axis=axis)
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)

    def da(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, arg, np.expand_dims(g, axis), axis)
        return grad

    return _unary(a, out_data, da)


# -- shape manipulation --------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data.reshape(shape), lambda g: g.reshape(a.data.shape))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data.T.copy(), lambda g: g.T)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    out._backward = backward_fn if _needs_grad(*tensors) else None
    if out._backward is None:
        out.parents = ()
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), parents=tuple(tensors))

    def backward_fn(g):
        for k, t in enumerate(tensors):
            t._accumulate(np.take(g, k, axis=axis))

    out._backward = backward_fn if _needs_grad(*tensors) else None
    if out._backward is None:
        out.parents = ()
    return out


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[key]

    def da(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return grad

    return _unary(a, np.array(out_data, copy=True), da)


# -- reverse sweep -------------------------------------------------------
def topo_order(root: Tensor) -> list:
    """Parents-before-children ordering of the recorded graph."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in visited:
            continue
        if expanded:
            visited.add(id(node))
            order.append(node)
        else:
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
    return order


def backward(root: Tensor, seed=None):
    """Reverse sweep from `root`, accumulating into .grad of every node."""
    order = topo_order(root)
    root._accumulate(np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=np.float64))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
