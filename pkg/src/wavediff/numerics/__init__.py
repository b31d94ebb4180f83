"""Minimal numeric substrate: tensors, layer primitives, reverse-mode gradients."""

from . import ops
from .gradcheck import finite_difference_check
from .kernels import BACKEND as KERNEL_BACKEND
from .tensor import ParamStore, Tensor, as_tensor, backward, grad, no_grad

__all__ = [
    "ops",
    "Tensor",
    "ParamStore",
    "as_tensor",
    "backward",
    "grad",
    "no_grad",
    "finite_difference_check",
    "KERNEL_BACKEND",
]
