from seizurecast.numerics.ops import (
    bce_with_logits,
    broadcast_to,
    concat,
    gelu,
    layer_norm,
    linear,
    matmul,
    sigmoid,
    softmax,
    take_rows,
)
from seizurecast.numerics.optim import AdamState, adam_step
from seizurecast.numerics.tensor import (
    Tape,
    Tensor,
    add,
    backward,
    div,
    exp,
    log,
    mean,
    mul,
    neg,
    power,
    reshape,
    sub,
    transpose,
    tsum,
    zero_grad,
)

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "bce_with_logits",
    "broadcast_to",
    "concat",
    "div",
    "exp",
    "gelu",
    "layer_norm",
    "linear",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "power",
    "reshape",
    "sigmoid",
    "softmax",
    "sub",
    "take_rows",
    "transpose",
    "tsum",
    "zero_grad",
]
