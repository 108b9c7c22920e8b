"""Minimal dense-tensor core with reverse-mode differentiation."""
from .gradcheck import grad_check
from .ops import (
    add, as_tensor, concat, constant, div, dropout, elementwise_mul, embedding_lookup,
    getitem, log, lstm_cell, lstm_sequence, matmul, max, mean, mul, neg, reshape, reweight,
    scatter_add, sigmoid, softmax, stack, sub, sum, take, tanh, transpose,
)
from .serialize import load_params, save_params
from .tensor import (
    Tape, Tensor, backward, current_tape, get_dtype, no_grad, perturb_backward,
    precision, set_precision,
)

__all__ = [
    "Tape", "Tensor", "backward", "current_tape", "get_dtype", "grad_check", "no_grad",
    "perturb_backward", "precision", "set_precision", "load_params", "save_params",
    "add", "as_tensor", "concat", "constant", "div", "dropout", "elementwise_mul",
    "embedding_lookup", "getitem", "log", "lstm_cell", "lstm_sequence", "matmul", "max",
    "mean", "mul", "neg", "reshape", "reweight", "scatter_add", "sigmoid", "softmax", "stack", "sub",
    "sum", "take", "tanh", "transpose",
]
