"""Minimal reverse-mode differentiable array kernel."""
from . import functional
from .kernels import BACKEND
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor

__all__ = ["Adam", "AdamState", "BACKEND", "Tensor", "adam_step", "as_tensor", "functional"]
