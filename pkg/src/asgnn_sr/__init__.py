"""Sparse graph attention super-resolution network with a numpy autodiff engine."""

__version__ = "0.1.0"
