"""Tape-based reverse accumulation over numpy arrays.

A :class:`Tensor` records the operation that produced it; calling
:func:`value_and_grad` on a scalar-valued function returns the exact gradient
with respect to a flat parameter vector. Only the primitives needed by the
networks and PDE residuals are supported.

The module-level helpers (:func:`tanh`, :func:`exp`, ...) dispatch on the
argument type so that the same expression code runs on plain ndarrays
(values only) or on tensors (values plus gradients).
"""

from __future__ import annotations

import itertools
from typing import Callable

import numpy as np

_ids = itertools.count()


class NonFiniteError(ArithmeticError):
    """Raised when a loss or gradient evaluates to NaN or infinity."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "_id", "requires_grad")
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        if self.requires_grad:
            self._parents = parents
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor({self.data!r})"

    # arithmetic

    def __add__(self, other):
        other = _lift(other)
        a, b = self, other

        def back(g):
            return (
                _unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None,
            )

        return Tensor(a.data + b.data, (a, b), back)

    def __radd__(self, other):
        return _lift(other) + self

    def __sub__(self, other):
        other = _lift(other)
        a, b = self, other

        def back(g):
            return (
                _unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None,
            )

        return Tensor(a.data - b.data, (a, b), back)

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        other = _lift(other)
        a, b = self, other

        def back(g):
            return (
                _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
            )

        return Tensor(a.data * b.data, (a, b), back)

    def __rmul__(self, other):
        return _lift(other) * self

    def __truediv__(self, other):
        other = _lift(other)
        a, b = self, other

        def back(g):
            ga = g / b.data
            return (
                _unbroadcast(ga, a.shape) if a.requires_grad else None,
                _unbroadcast(-ga * a.data / b.data, b.shape) if b.requires_grad else None,
            )

        return Tensor(a.data / b.data, (a, b), back)

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        other = _lift(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")

        def back(g):
            return (
                g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None,
            )

        return Tensor(a.data @ b.data, (a, b), back)

    def __rmatmul__(self, other):
        return _lift(other) @ self

    def __getitem__(self, idx):
        shape = self.shape
        keys = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(k, (int, slice)) for k in keys)

        def back(g):
            full = np.zeros(shape)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return Tensor(self.data[idx], (self,), back)

    @property
    def T(self):
        return Tensor(self.data.T, (self,), lambda g: (g.T,))

    def reshape(self, *shape):
        old = self.shape
        return Tensor(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    # reductions and elementwise functions

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def tanh(self):
        t = np.tanh(self.data)
        return Tensor(t, (self,), lambda g: (g * (1.0 - t * t),))

    def exp(self):
        e = np.exp(self.data)
        return Tensor(e, (self,), lambda g: (g * e,))

    def log(self):
        a = self.data
        return Tensor(np.log(a), (self,), lambda g: (g / a,))

    def logsumexp(self, axis=-1):
        a = self.data
        out = _logsumexp(a, axis)
        soft = np.exp(a - out)
        return Tensor(out, (self,), lambda g: (g * soft,))

    # gradient

    def backward(self) -> dict[int, np.ndarray]:
        """Accumulate d(self)/d(node) for every node in the graph.

        Nodes are processed in decreasing creation order, which is a valid
        topological order and fixes the accumulation order run to run.
        """
        if self.data.size != 1:
            raise ValueError("backward requires a scalar output")
        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(p for p in node._parents if p.requires_grad and p._id not in nodes)
        grads = {self._id: np.ones_like(self.data)}
        for nid in sorted(nodes, reverse=True):
            node = nodes[nid]
            g = grads.pop(nid, None) if node._backward is not None else grads.get(nid)
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg
        return grads


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    top = np.max(a, axis=axis, keepdims=True)
    return top + np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True))


# Type-dispatching helpers shared by the value-only and differentiated paths.

def tanh(a):
    return a.tanh() if isinstance(a, Tensor) else np.tanh(a)


def exp(a):
    return a.exp() if isinstance(a, Tensor) else np.exp(a)


def log(a):
    return a.log() if isinstance(a, Tensor) else np.log(a)


def logsumexp(a, axis=-1):
    """Stable log-sum-exp along ``axis`` with the axis kept."""
    return a.logsumexp(axis) if isinstance(a, Tensor) else _logsumexp(a, axis)


def total(a, axis=None, keepdims=False):
    return a.sum(axis=axis, keepdims=keepdims) if isinstance(a, Tensor) else np.sum(
        a, axis=axis, keepdims=keepdims
    )


def mean(a):
    return a.mean() if isinstance(a, Tensor) else np.sum(a) * (1.0 / np.size(a))


def data(a) -> np.ndarray:
    return a.data if isinstance(a, Tensor) else np.asarray(a)


def value_and_grad(
    loss_evaluator: Callable, params: np.ndarray, *, aux: bool = False
):
    """Evaluate ``loss_evaluator(params)`` and its exact gradient.

    With ``aux=True`` the evaluator returns ``(loss, extras)`` and extras are
    passed through untouched (they may contain tensors; only ``.data`` is
    meaningful to callers).
    """
    leaf = Tensor(np.array(params, dtype=np.float64, copy=True), requires_grad=True)
    out = loss_evaluator(leaf)
    loss, extras = out if aux else (out, None)
    loss = _lift(loss)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss is not finite: {value}")
    grads = loss.backward()
    g = grads.get(leaf._id)
    g = np.zeros_like(leaf.data) if g is None else np.array(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient contains non-finite entries")
    return (value, g, extras) if aux else (value, g)


def param_gradient(loss_evaluator: Callable, params: np.ndarray) -> np.ndarray:
    """Exact gradient of a scalar loss with respect to a flat parameter vector."""
    return value_and_grad(loss_evaluator, params)[1]


def fd_check(loss_evaluator: Callable, params: np.ndarray, step: float) -> float:
    """Deviation between the exact gradient and central differences.

    Measured as ``max|exact - fd| / max|exact|`` over all components, so
    entries that are tiny compared with the gradient do not dominate.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = np.asarray(params, dtype=np.float64)
    exact = param_gradient(loss_evaluator, params)
    fd = np.empty_like(exact)
    for i in range(params.size):
        hi = params.copy()
        lo = params.copy()
        hi[i] += step
        lo[i] -= step
        fd[i] = (float(data(loss_evaluator(hi))) - float(data(loss_evaluator(lo)))) / (2 * step)
    scale = max(float(np.max(np.abs(exact))), 1e-12)
    return float(np.max(np.abs(exact - fd))) / scale
