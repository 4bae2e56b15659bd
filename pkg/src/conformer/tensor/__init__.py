"""Minimal dense tensor core with tape-based reverse-mode autodiff."""

from .gradcheck import GradCheckReport, directional_check, grad_check
from .io import decode_tensor, encode_tensor, load_tensor, save_tensor
from .ops import (activation, add, batch_norm, concat, conv1d, conv2d, div, dropout, exp, glu,
                  layer_norm, linear, log, matmul, mean, mul, neg, norm, pad, relu, reshape,
                  sigmoid, softmax, split, sqrt, sub, swish, transpose)
from .ops import sum as sum_
from .tensor import (Tape, Tensor, as_tensor, backward, current_tape, default_dtype,
                     detect_anomaly, no_grad, precision, set_default_dtype, use_tape)

__all__ = [
    "GradCheckReport", "Tape", "directional_check", "Tensor", "activation", "add", "as_tensor", "backward",
    "batch_norm", "concat", "conv1d", "conv2d", "current_tape", "decode_tensor",
    "default_dtype", "detect_anomaly", "div", "dropout", "encode_tensor", "exp", "glu",
    "grad_check", "layer_norm", "linear", "load_tensor", "log", "matmul", "mean", "mul", "neg",
    "no_grad", "norm", "pad", "precision", "relu", "reshape", "save_tensor", "set_default_dtype",
    "sigmoid", "softmax", "split", "sqrt", "sub", "sum_", "swish", "transpose", "use_tape",
]
