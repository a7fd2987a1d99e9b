"""Minimal reverse-mode automatic differentiation over dense float64 arrays."""

from . import ops
from .checkpoint import CheckpointError
from .optim import SGD, Adam, make_optimizer
from .tensor import ShapeError, Tensor, as_tensor, backward

__all__ = ["Tensor", "ShapeError", "CheckpointError", "as_tensor", "backward", "ops",
           "SGD", "Adam", "make_optimizer"]
