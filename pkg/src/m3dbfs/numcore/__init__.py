"""Minimal reverse-mode differentiable computation core."""

from .gradcheck import check_gradients, numerical_grad, relative_error
from .nn import Linear, Module, Parameter, glorot_uniform
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    blockdiag_matmul,
    concat,
    div,
    exp,
    is_grad_enabled,
    l2_normalize,
    log,
    log_softmax,
    masked_softmax,
    matmul,
    mean_rows,
    mul,
    no_grad,
    normal_cdf,
    relu,
    reshape,
    row_softmax,
    scale,
    scatter_rows,
    softplus,
    sub,
    take_rows,
    tensor_mean,
    tensor_sum,
    transpose,
)

__all__ = [
    "check_gradients",
    "numerical_grad",
    "relative_error",
    "Linear",
    "Module",
    "Parameter",
    "glorot_uniform",
    "Adam",
    "AdamState",
    "adam_step",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "blockdiag_matmul",
    "concat",
    "div",
    "exp",
    "is_grad_enabled",
    "l2_normalize",
    "log",
    "log_softmax",
    "masked_softmax",
    "matmul",
    "mean_rows",
    "mul",
    "no_grad",
    "normal_cdf",
    "relu",
    "reshape",
    "row_softmax",
    "scale",
    "scatter_rows",
    "softplus",
    "sub",
    "take_rows",
    "tensor_mean",
    "tensor_sum",
    "transpose",
]
