"""Minimal differentiable numerics: tensors, layers, optimizer, seeded RNG."""
from . import gradcheck, layers, optim, rng, tensor
from .layers import ParameterSet, backward
from .optim import Adam
from .rng import PortableRng, gaussian_sample
from .tensor import Tensor, no_grad

__all__ = [
    "tensor", "layers", "optim", "rng", "gradcheck",
    "ParameterSet", "backward", "Adam", "PortableRng", "gaussian_sample",
    "Tensor", "no_grad",
]
