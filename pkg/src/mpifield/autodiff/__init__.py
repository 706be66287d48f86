from .tensor import Tape, Tensor, constant, current_tape, make_op, parameter, set_debug_checks
from .ops import (
    abs_,
    add,
    avg_downsample2,
    bilinear_sample,
    concat,
    conv2d,
    div,
    grad_x,
    grad_y,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    sqrt_,
    stack,
    sub,
    sum_,
    transpose2d,
    warp_stack,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "Tape",
    "Tensor",
    "abs_",
    "adam_step",
    "add",
    "avg_downsample2",
    "bilinear_sample",
    "concat",
    "constant",
    "conv2d",
    "current_tape",
    "div",
    "grad_x",
    "grad_y",
    "make_op",
    "matmul",
    "mean",
    "mul",
    "parameter",
    "relu",
    "reshape",
    "scale",
    "set_debug_checks",
    "sigmoid",
    "sqrt_",
    "stack",
    "sub",
    "sum_",
    "transpose2d",
    "warp_stack",
]
