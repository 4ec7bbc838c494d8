"""Tensor core: float64 tensors, reverse-mode autodiff, NN ops, parameter sets."""
from .grad import adapt_steps, gradient, gradient_through_update
from .ops import (
    DegenerateStatisticsError,
    batchnorm2d,
    conv2d,
    conv2d_weight_grad,
    linear,
    maxpool2d,
    pixel_cross_entropy,
    softmax_cross_entropy,
    upsample2d,
)
from .params import ParamSet, flatten_params, unflatten_params
from .tensor import (
    DimensionError,
    Tensor,
    concat,
    grad_mode,
    matmul,
    no_grad,
    relu,
)

__all__ = [
    "Tensor", "ParamSet", "DimensionError", "DegenerateStatisticsError",
    "gradient", "gradient_through_update", "adapt_steps", "grad_mode", "no_grad",
    "matmul", "conv2d", "conv2d_weight_grad", "maxpool2d", "relu", "batchnorm2d",
    "linear", "upsample2d", "concat", "softmax_cross_entropy", "pixel_cross_entropy",
    "flatten_params", "unflatten_params",
]
