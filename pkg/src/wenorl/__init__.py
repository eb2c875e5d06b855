"""Learned WENO sub-stencil weighting for 1-D conservation laws.

A small MLP policy picks the three sub-stencil weights of a fifth-order WENO
reconstruction at every cell interface. Training backpropagates a local
solution-quality reward through the fully unrolled solver on a scalar
reverse-mode tape; no external autodiff framework is involved.
"""

from .tape import BACKEND, available_backends

__version__ = "0.1.0"
__all__ = ["BACKEND", "available_backends", "__version__"]
