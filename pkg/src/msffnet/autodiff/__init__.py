"""Minimal reverse-mode autodiff over numpy arrays."""
from . import ops
from .gradcheck import grad_check
from .tensor import (ComputationTape, Node, Tensor, backward, default_dtype, get_precision,
                     grad_enabled, no_grad, precision, set_precision)
from .textio import dump_tensor, load_tensor

__all__ = [
    "ComputationTape", "Node", "Tensor", "backward", "default_dtype", "dump_tensor",
    "get_precision", "grad_check", "grad_enabled", "load_tensor", "no_grad", "ops",
    "precision", "set_precision",
]
