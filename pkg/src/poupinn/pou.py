"""Partition-of-unity conductivity model.

A softmax-headed network gives partition functions ``phi_i(x)`` that sum to
one; each partition carries a log-conductivity ``c_i`` and the field is
``K(x) = sum_i phi_i(x) exp(c_i)``, a convex combination of positive levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as nw
from .numcore import autodiff as ad
from .numcore.jet import Jet2


@dataclass
class PartitionModel:
    spec: tuple
    zeta: nw.NetworkParams
    logc: np.ndarray

    def __post_init__(self):
        nw.validate_spec(self.spec)
        if self.spec[-1].activation != "softmax":
            raise ValueError("partition network must end in a softmax layer")
        if ad.data(self.logc).shape != (self.n_partitions,):
            raise ValueError("need one log-conductivity per partition")

    @property
    def n_partitions(self) -> int:
        return self.spec[-1].out_dim

    @classmethod
    def create(cls, spec, seed, logc=None) -> "PartitionModel":
        """Glorot-initialised partition network; levels default to ``exp(0) = 1``."""
        spec = tuple(spec)
        logc = np.zeros(spec[-1].out_dim) if logc is None else np.asarray(logc, dtype=np.float64)
        return cls(spec, nw.init_glorot(spec, seed), logc)

    def n_params(self) -> int:
        return nw.n_params(self.spec) + self.n_partitions

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.zeta.flatten(), np.asarray(self.logc, dtype=np.float64)])

    @classmethod
    def from_flat(cls, spec, flat) -> "PartitionModel":
        spec = tuple(spec)
        k = nw.n_params(spec)
        return cls(spec, nw.NetworkParams.from_flat(spec, flat[:k]), flat[k:])

    def levels(self) -> np.ndarray:
        """Learned conductivity levels ``exp(c_i)``."""
        return np.exp(ad.data(self.logc))

    def permuted(self, perm) -> "PartitionModel":
        """Same field with partitions relabelled: new partition ``j`` is old ``perm[j]``."""
        perm = np.asarray(perm)
        layers = list(self.zeta.layers)
        w, b = layers[-1]
        layers[-1] = (np.asarray(w)[perm], np.asarray(b)[perm])
        return PartitionModel(self.spec, nw.NetworkParams(layers), np.asarray(self.logc)[perm])


def phi(model: PartitionModel, x):
    """Partition functions at one point ``(N,)`` or a batch ``(n, N)``."""
    return nw.forward(model.zeta, model.spec, x)


def phi_jet(model: PartitionModel, x) -> Jet2:
    return nw.forward_jet(model.zeta, model.spec, x)


def conductivity(model: PartitionModel, x):
    return ad.total(phi(model, x) * ad.exp(model.logc), axis=-1)


def conductivity_jet(model: PartitionModel, x) -> Jet2:
    """Jet of ``K``: value, gradient and Hessian through the partition network."""
    levels = ad.exp(model.logc)
    return phi_jet(model, x).map(lambda c: ad.total(c * levels, axis=-1))


def hard_partition_from_phi(p) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest index on ties.
    return np.argmax(np.asarray(p), axis=-1)


def hard_partition(model: PartitionModel, x):
    return hard_partition_from_phi(ad.data(phi(model, x)))


class LearnedField:
    """Adapter giving a :class:`PartitionModel` the conductivity-field interface."""

    kind = "learned"

    def __init__(self, model: PartitionModel):
        self.model = model
        self.name = f"learned(N={model.n_partitions})"
        self.levels = tuple(model.levels())

    def value(self, x):
        return ad.data(conductivity(self.model, x))

    def jet(self, x) -> Jet2:
        return conductivity_jet(self.model, x)


def fit_supervised(model: PartitionModel, dataset, config):
    """Fit ``K`` to ``(x, K_target)`` pairs by mean squared error plus L2.

    Returns the trained model and the per-epoch history rows.
    """
    from . import train

    X = np.asarray([p for p, _ in dataset], dtype=np.float64).reshape(-1, 2)
    targets = np.asarray([k for _, k in dataset], dtype=np.float64)
    if len(X) == 0:
        raise ValueError("dataset is empty")
    if np.any(targets <= 0):
        raise ValueError("conductivity targets must be positive")
    problem = train.SupervisedProblem(X, targets)
    result = train.train_loop(problem, train.Models(pou=model), config)
    return result.models.pou, result.history
