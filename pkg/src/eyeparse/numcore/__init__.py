"""Minimal dense-tensor core with reverse-mode autodiff."""

from .ops import (ACTIVATIONS, activation, add, concat, conv3d, conv3d_output_shape, dense,
                  dropout, flatten, global_avg_pool3d, index, log, lstm_sequence, lstm_step,
                  mean, mul, relu, reshape, sigmoid, softmax, softmax_cross_entropy, sub, tanh)
from .ops import sum as sum_
from .optim import clip_grad_norm, glorot_uniform, sgd_step, zeros
from .rng import RngState
from .tensor import DEFAULT_DTYPE, Graph, Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "ACTIVATIONS", "DEFAULT_DTYPE", "Graph", "RngState", "Tensor", "activation", "add",
    "as_tensor", "backward", "clip_grad_norm", "concat", "conv3d", "conv3d_output_shape", "dense", "dropout",
    "flatten", "glorot_uniform", "global_avg_pool3d", "grad_enabled", "index", "log",
    "lstm_sequence", "lstm_step", "mean", "mul", "no_grad", "relu", "reshape", "sgd_step",
    "sigmoid", "softmax", "softmax_cross_entropy", "sub", "sum_", "tanh", "zeros",
]
