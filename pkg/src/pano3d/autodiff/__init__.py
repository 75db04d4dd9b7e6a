"""Minimal reverse-mode autodiff used by the whole pipeline."""

from .tensor import Tape, Tensor, active_tape, as_tensor
from .ops import (
    add,
    concat,
    conv2d,
    conv3d,
    dropout,
    gather_rows,
    getitem,
    instance_norm,
    layer_norm,
    matmul,
    max_reduce,
    mean,
    mul,
    neg,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum_,
    swish,
    transpose,
    transposed_conv2d,
    transposed_conv3d,
)
from .gradcheck import GradcheckResult, gradcheck, numeric_gradient

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "add",
    "concat",
    "conv2d",
    "conv3d",
    "dropout",
    "gather_rows",
    "getitem",
    "instance_norm",
    "layer_norm",
    "matmul",
    "max_reduce",
    "mean",
    "mul",
    "neg",
    "reshape",
    "sigmoid",
    "softmax",
    "sub",
    "sum_",
    "swish",
    "transpose",
    "transposed_conv2d",
    "transposed_conv3d",
    "GradcheckResult",
    "gradcheck",
    "numeric_gradient",
]
