from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (
    add,
    bce_with_logits,
    concatenate,
    exp,
    fusion_conv_311,
    gelu,
    global_avg_pool,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    reshape,
    sigmoid,
    sigmoid_array,
    softmax,
    stack,
    sum_,
    swapaxes,
    take,
    transpose,
)
from .optim import Adam, AdamState, adam_step
from .tensor import NumericError, Tensor, ensure_tensor

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckReport",
    "NumericError",
    "Tensor",
    "adam_step",
    "add",
    "bce_with_logits",
    "concatenate",
    "ensure_tensor",
    "exp",
    "fusion_conv_311",
    "gelu",
    "global_avg_pool",
    "grad_check",
    "layer_norm",
    "linear",
    "log",
    "matmul",
    "mean",
    "mul",
    "relative_error",
    "reshape",
    "sigmoid",
    "sigmoid_array",
    "softmax",
    "stack",
    "sum_",
    "swapaxes",
    "take",
    "transpose",
]
