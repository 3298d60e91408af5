"""Minimal reverse-mode differentiation core."""
from .gradcheck import finite_diff_grad, max_relative_error
from .layers import activation, affine, conv2d, conv_out_size, flatten, maxpool2d, relu, tanh
from .optim import OptState, ParamSet, rmsprop_step
from .tensor import PoisonedGradientError, Tensor, backward, concat

__all__ = [
    "OptState",
    "ParamSet",
    "PoisonedGradientError",
    "Tensor",
    "activation",
    "affine",
    "backward",
    "concat",
    "conv2d",
    "conv_out_size",
    "finite_diff_grad",
    "flatten",
    "max_relative_error",
    "maxpool2d",
    "relu",
    "rmsprop_step",
    "tanh",
]
