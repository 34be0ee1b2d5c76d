"""Minimal reverse-mode autodiff over (batch, channel, height, width) arrays."""

from .tensor import (
    Tape,
    Tensor,
    apply_op,
    backward,
    build_tape,
    constant,
    grad_enabled,
    needs_grad,
    no_grad,
    parameter,
    zero_grads,
)
from . import ops  # attaches Tensor operators
from .ops import (
    absolute,
    activation,
    bilinear_resize,
    clamp,
    concat,
    leaky_relu,
    narrow,
    reduce_mean,
    reduce_sum,
    resize_raw,
    sigmoid,
    softplus,
    square,
    tanh,
)
from .conv import conv2d, conv2d_raw, conv_transpose2d
from .optim import Adam
from .gradcheck import CheckResult, GradCheckReport, check_gradients

__all__ = [
    "Adam",
    "CheckResult",
    "GradCheckReport",
    "Tape",
    "Tensor",
    "absolute",
    "activation",
    "apply_op",
    "backward",
    "bilinear_resize",
    "build_tape",
    "check_gradients",
    "clamp",
    "concat",
    "constant",
    "conv2d",
    "conv2d_raw",
    "conv_transpose2d",
    "grad_enabled",
    "leaky_relu",
    "narrow",
    "needs_grad",
    "no_grad",
    "parameter",
    "reduce_mean",
    "reduce_sum",
    "resize_raw",
    "sigmoid",
    "softplus",
    "square",
    "tanh",
    "zero_grads",
]
