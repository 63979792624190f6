"""Dense tanh/linear/softmax networks with value and jet forward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numcore import autodiff as ad
from .numcore import jet as jt
from .numcore.jet import Jet2

ACTIVATIONS = ("tanh", "linear", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {"in_dim": self.in_dim, "out_dim": self.out_dim, "activation": self.activation}


Spec = Sequence[LayerSpec]


def validate_spec(spec: Spec) -> None:
    if not spec:
        raise ValueError("network needs at least one layer")
    for a, b in zip(spec, spec[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError(f"layer mismatch: {a.out_dim} -> {b.in_dim}")
    for layer in spec[:-1]:
        if layer.activation == "softmax":
            raise ValueError("softmax is only allowed on the final layer")


def mlp(in_dim: int, hidden: Sequence[int], out_dim: int, head: str = "linear") -> tuple[LayerSpec, ...]:
    """Hidden tanh layers followed by an affine head with ``head`` activation."""
    dims = [in_dim, *hidden]
    layers = [LayerSpec(a, b, "tanh") for a, b in zip(dims, dims[1:])]
    layers.append(LayerSpec(dims[-1], out_dim, head))
    spec = tuple(layers)
    validate_spec(spec)
    return spec


def spec_from_dicts(items) -> tuple[LayerSpec, ...]:
    spec = tuple(LayerSpec(**d) for d in items)
    validate_spec(spec)
    return spec


def n_params(spec: Spec) -> int:
    return sum(l.out_dim * l.in_dim + l.out_dim for l in spec)


def unflatten(spec: Spec, flat) -> list:
    """Split a flat vector (ndarray or Tensor) into ``(W, b)`` per layer.

    Layer-major order, each weight matrix row-major followed by its bias.
    """
    if flat.shape != (n_params(spec),):
        raise ValueError(f"expected {n_params(spec)} parameters, got shape {flat.shape}")
    layers = []
    pos = 0
    for l in spec:
        nw = l.out_dim * l.in_dim
        w = flat[pos : pos + nw].reshape(l.out_dim, l.in_dim)
        pos += nw
        b = flat[pos : pos + l.out_dim]
        pos += l.out_dim
        layers.append((w, b))
    return layers


@dataclass
class NetworkParams:
    layers: list

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in self.layers:
            parts.append(np.asarray(w, dtype=np.float64).ravel())
            parts.append(np.asarray(b, dtype=np.float64).ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, spec: Spec, flat) -> "NetworkParams":
        return cls(unflatten(spec, flat))

    def matches(self, spec: Spec) -> bool:
        return len(self.layers) == len(spec) and all(
            ad.data(w).shape == (l.out_dim, l.in_dim) and ad.data(b).shape == (l.out_dim,)
            for (w, b), l in zip(self.layers, spec)
        )


def _layers(params):
    return params.layers if isinstance(params, NetworkParams) else params


def init_glorot(spec: Spec, seed) -> NetworkParams:
    """Glorot-uniform weights, zero biases.

    ``seed`` is an integer or a ``numpy.random.Generator``.
    """
    validate_spec(spec)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for l in spec:
        limit = np.sqrt(6.0 / (l.in_dim + l.out_dim))
        w = rng.uniform(-limit, limit, size=(l.out_dim, l.in_dim))
        layers.append((w, np.zeros(l.out_dim)))
    return NetworkParams(layers)


def _softmax(z):
    return ad.exp(z - ad.logsumexp(z, -1))


def forward(params, spec: Spec, x):
    """Network output for one point ``(2,)`` or a batch ``(n, 2)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x.reshape(1, -1) if single else x
    for (w, b), l in zip(_layers(params), spec):
        z = a @ w.T + b
        if l.activation == "tanh":
            a = ad.tanh(z)
        elif l.activation == "softmax":
            a = _softmax(z)
        else:
            a = z
    return a[0] if single else a


def input_jet(x) -> Jet2:
    """Jet of the identity map on a batch of points, feature axis last."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    zero = np.zeros((1, 2))
    return Jet2(x, np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), zero, zero, zero)


def forward_jet(params, spec: Spec, x) -> Jet2:
    """Output jets; each component has shape ``(n, out_dim)`` (``(out_dim,)`` for one point)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = input_jet(x)
    for (w, b), l in zip(_layers(params), spec):
        wt = w.T
        z = Jet2(a.v @ wt + b, a.gx @ wt, a.gy @ wt, a.hxx @ wt, a.hxy @ wt, a.hyy @ wt)
        if l.activation == "tanh":
            a = jt.tanh(z)
        elif l.activation == "softmax":
            a = jt.softmax(z)
        else:
            a = z
    n = x.shape[0] if not single else 1
    a = a.map(lambda c: _broadcast_rows(c, n))
    return a.map(lambda c: c[0]) if single else a


def _broadcast_rows(c, n):
    if ad.data(c).shape[0] == n:
        return c
    # Derivative components of an affine-only network do not depend on x.
    return c + np.zeros((n, ad.data(c).shape[1]))


def l2_penalty(params, lam: float):
    """``lam`` times the sum of squared weights; biases are not penalised."""
    if lam < 0:
        raise ValueError("L2 coefficient must be non-negative")
    total = 0.0
    for w, _ in _layers(params):
        total = total + ad.total(w * w)
    return lam * total
