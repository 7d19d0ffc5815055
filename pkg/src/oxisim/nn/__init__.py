from .tensor import Parameter, Tape, Tensor, active_tape, record_op
from .ops import (
    add,
    concat_channels,
    conv2d,
    conv_out_size,
    conv_transpose2d,
    conv_transpose_out_size,
    instance_norm,
    leaky_relu,
    relu,
    sigmoid,
    tanh,
)
from .blocks import ResidualBlock, conv_params, norm_params
from .optim import AdamState, adam_step
from .gradcheck import GradCheckResult, grad_check, numeric_gradient
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Parameter", "Tape", "Tensor", "active_tape", "record_op",
    "add", "concat_channels", "conv2d", "conv_out_size", "conv_transpose2d",
    "conv_transpose_out_size", "instance_norm", "leaky_relu", "relu",
    "sigmoid", "tanh",
    "ResidualBlock", "conv_params", "norm_params",
    "AdamState", "adam_step",
    "GradCheckResult", "grad_check", "numeric_gradient",
    "load_checkpoint", "save_checkpoint",
]
