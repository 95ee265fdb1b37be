"""Minimal float64 tensor library with reverse-mode autodiff and Adam."""

from . import tensor as ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradcheck, numerical_gradient, relative_error
from .module import LayerNorm, Linear, Module, xavier_uniform
from .optim import Adam, Optimizer, adam_step
from .tensor import (
    NEG_INF,
    Parameter,
    Tensor,
    backward,
    concat,
    dropout,
    embedding,
    gather,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    maximum,
    no_grad,
    relu,
    scatter_add,
    sigmoid,
    softmax,
    sqrt,
    stack,
    tanh,
)

__all__ = [
    "NEG_INF", "Adam", "LayerNorm", "Linear", "Module", "Optimizer", "Parameter", "Tensor",
    "adam_step", "backward", "gradcheck", "numerical_gradient", "relative_error", "concat", "dropout", "embedding", "gather", "gelu", "layer_norm",
    "load_checkpoint", "log_softmax", "matmul", "maximum", "no_grad", "ops", "relu",
    "save_checkpoint", "scatter_add", "sigmoid", "softmax", "sqrt", "stack", "tanh",
    "xavier_uniform",
]
