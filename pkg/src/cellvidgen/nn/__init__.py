from .tensor import Tensor, no_grad
from .modules import Module, Conv2d, Linear, ConvBlock, UNet, timestep_embedding
from .optim import Adam
from . import tensor as ops

__all__ = [
    "Tensor",
    "no_grad",
    "Module",
    "Conv2d",
    "Linear",
    "ConvBlock",
    "UNet",
    "timestep_embedding",
    "Adam",
    "ops",
]
