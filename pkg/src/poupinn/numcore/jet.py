"""Second-order forward jets in two spatial variables.

A :class:`Jet2` carries a scalar field's value, gradient ``(d/dx, d/dy)`` and
Hessian ``(d2/dx2, d2/dxdy, d2/dy2)``. Components may be Python floats,
ndarrays (broadcast together, one jet per element) or autodiff tensors, so the
same propagation rules serve pointwise checks, batched network evaluation and
parameter differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class Jet2:
    v: Any
    gx: Any
    gy: Any
    hxx: Any
    hxy: Any
    hyy: Any

    @property
    def grad(self):
        return (self.gx, self.gy)

    @property
    def hess(self):
        return (self.hxx, self.hxy, self.hyy)

    @property
    def laplacian(self):
        return self.hxx + self.hyy

    def components(self):
        return (self.v, self.gx, self.gy, self.hxx, self.hxy, self.hyy)

    def map(self, fn) -> "Jet2":
        """Apply ``fn`` to every component (indexing, squeezing, ...)."""
        return Jet2(*(fn(c) for c in self.components()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(ad.data(c))) for c in self.components())

    # linear structure

    def __add__(self, other):
        if isinstance(other, Jet2):
            return Jet2(*(a + b for a, b in zip(self.components(), other.components())))
        return Jet2(self.v + other, self.gx, self.gy, self.hxx, self.hxy, self.hyy)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(*(-c for c in self.components()))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, s) -> "Jet2":
        return Jet2(*(s * c for c in self.components()))

    def __mul__(self, other):
        if not isinstance(other, Jet2):
            return self.scale(other)
        a, b = self, other
        return Jet2(
            a.v * b.v,
            a.v * b.gx + b.v * a.gx,
            a.v * b.gy + b.v * a.gy,
            a.v * b.hxx + b.v * a.hxx + 2.0 * (a.gx * b.gx),
            a.v * b.hxy + b.v * a.hxy + a.gx * b.gy + a.gy * b.gx,
            a.v * b.hyy + b.v * a.hyy + 2.0 * (a.gy * b.gy),
        )

    __rmul__ = __mul__


def constant(value) -> Jet2:
    return Jet2(value, 0.0, 0.0, 0.0, 0.0, 0.0)


def jet_seed(x) -> tuple[Jet2, Jet2]:
    """Jets of the coordinate functions at ``x = (x, y)``."""
    x0, x1 = x[0], x[1]
    zero = np.zeros_like(np.asarray(x0, dtype=np.float64))
    one = zero + 1.0
    return (
        Jet2(x0 + zero, one, zero, zero, zero, zero),
        Jet2(x1 + zero, zero, one, zero, zero, zero),
    )


def compose(j: Jet2, value, d1, d2) -> Jet2:
    """Chain rule for a scalar function g with g, g', g'' already evaluated."""
    return Jet2(
        value,
        d1 * j.gx,
        d1 * j.gy,
        d1 * j.hxx + d2 * (j.gx * j.gx),
        d1 * j.hxy + d2 * (j.gx * j.gy),
        d1 * j.hyy + d2 * (j.gy * j.gy),
    )


def tanh(j: Jet2) -> Jet2:
    t = ad.tanh(j.v)
    d1 = 1.0 - t * t
    return compose(j, t, d1, -2.0 * t * d1)


def exp(j: Jet2) -> Jet2:
    e = ad.exp(j.v)
    return compose(j, e, e, e)


def reciprocal(j: Jet2) -> Jet2:
    if np.any(ad.data(j.v) == 0):
        raise ZeroDivisionError("reciprocal of a jet with zero value")
    r = 1.0 / j.v
    r2 = r * r
    return compose(j, r, -r2, 2.0 * r2 * r)


def affine(weights, jets, bias=0.0) -> Jet2:
    """``sum_i weights[i] * jets[i] + bias`` for a sequence of scalar jets."""
    out = constant(bias)
    for w, j in zip(weights, jets):
        out = out + j.scale(w)
    return out


def logsumexp(z: Jet2, axis: int = -1) -> Jet2:
    """Jet of ``log(sum_k exp(z_k))`` over ``axis`` (kept with length 1)."""
    lse = ad.logsumexp(z.v, axis)
    s = ad.exp(z.v - lse)
    mx = ad.total(s * z.gx, axis=axis, keepdims=True)
    my = ad.total(s * z.gy, axis=axis, keepdims=True)
    hxx = ad.total(s * (z.hxx + z.gx * z.gx), axis=axis, keepdims=True) - mx * mx
    hxy = ad.total(s * (z.hxy + z.gx * z.gy), axis=axis, keepdims=True) - mx * my
    hyy = ad.total(s * (z.hyy + z.gy * z.gy), axis=axis, keepdims=True) - my * my
    return Jet2(lse, mx, my, hxx, hxy, hyy)


def softmax(z: Jet2, axis: int = -1) -> Jet2:
    """Jets of all softmax components along ``axis``: ``exp(z_k - lse(z))``."""
    return exp(z - logsumexp(z, axis))


def _stack(jets) -> Jet2:
    comps = zip(*(j.components() for j in jets))
    return Jet2(*(np.stack(np.broadcast_arrays(*map(np.asarray, c)), axis=-1) for c in comps))


_BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
}
_UNARY = {"tanh": tanh, "exp": exp, "reciprocal": reciprocal}


def jet_apply(primitive: str, *inputs: Jet2, weights=None, bias: float = 0.0, index: int = 0) -> Jet2:
    """Apply a named primitive to scalar jets.

    ``affine`` takes ``weights`` and ``bias``; ``softmax-component`` returns
    component ``index`` of the softmax over all inputs.
    """
    if primitive in _BINARY:
        if len(inputs) != 2:
            raise ValueError(f"{primitive} takes two jets")
        return _BINARY[primitive](*inputs)
    if primitive in _UNARY:
        if len(inputs) != 1:
            raise ValueError(f"{primitive} takes one jet")
        return _UNARY[primitive](inputs[0])
    if primitive == "affine":
        if weights is None or len(weights) != len(inputs):
            raise ValueError("affine needs one weight per input jet")
        return affine(weights, inputs, bias)
    if primitive == "softmax-component":
        out = softmax(_stack(inputs))
        return out.map(lambda c: c[..., index])
    raise ValueError(f"unknown primitive {primitive!r}")
