"""Numerical kernel: spatial jets and exact parameter gradients."""

from .autodiff import NonFiniteError, Tensor, fd_check, param_gradient, value_and_grad
from .jet import Jet2, jet_apply, jet_seed

__all__ = [
    "Jet2",
    "NonFiniteError",
    "Tensor",
    "fd_check",
    "jet_apply",
    "jet_seed",
    "param_gradient",
    "value_and_grad",
]
