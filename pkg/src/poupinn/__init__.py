"""Partition-of-unity physics-informed networks for piecewise-constant diffusion."""

__version__ = "0.1.0"
