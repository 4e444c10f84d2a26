"""Minimal reverse-mode autodiff engine on numpy arrays."""

from .core import (
    Node,
    ShapeError,
    Tensor,
    TensorError,
    UsageError,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    precision,
)
from .ops import (
    add, channel_stats, clamp, concat, conv1d, conv2d, div, gather, gelu, layer_norm,
    matmul, mean, mul, neg, relu, reshape, sigmoid, softmax, sqrt_floor, sub, sum, take,
    transpose,
)
from .gradcheck import gradcheck, numerical_grad

__all__ = [
    "Node", "ShapeError", "Tensor", "TensorError", "UsageError", "get_default_dtype",
    "is_grad_enabled", "no_grad", "precision", "add", "channel_stats", "clamp", "concat",
    "conv1d", "conv2d", "div", "gather", "gelu", "layer_norm", "matmul", "mean", "mul", "neg",
    "relu", "reshape", "sigmoid", "softmax", "sqrt_floor", "sub", "sum", "take", "transpose",
    "gradcheck", "numerical_grad",
]
