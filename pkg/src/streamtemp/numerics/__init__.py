from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    dot,
    exp,
    getitem,
    graph_mix,
    lstm_seq,
    matmul,
    mul,
    mv,
    relu,
    reshape,
    sigmoid,
    softmax_row,
    sqrt,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .adam import GROUP_NAMES, AdamState, ParamGroup, adam_step, collect_params

__all__ = [
    "Tensor", "add", "as_tensor", "backward", "broadcast_to", "concat",
    "dot", "exp", "getitem", "graph_mix", "lstm_seq", "matmul", "mul",
    "mv", "relu", "reshape", "sigmoid", "softmax_row", "sqrt", "sub",
    "tanh", "tmean", "transpose", "tsum",
    "GROUP_NAMES", "AdamState", "ParamGroup", "adam_step", "collect_params",
]
