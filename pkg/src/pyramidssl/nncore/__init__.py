"""Minimal reverse-mode autodiff with the layers, losses and optimiser the models need."""

from .checkpoint import load_weights, save_weights
from .gradcheck import gradcheck, relative_error
from .ops import (avgpool2d, concat, conv2d, dense, flatten, global_avgpool, log_softmax,
                  maxpool2d, one_hot, relu, sigmoid, sigmoid_cross_entropy, softmax,
                  softmax_cross_entropy)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, backward, no_grad

__all__ = [
    "Adam", "AdamState", "Tensor", "adam_step", "avgpool2d", "backward", "concat", "conv2d",
    "dense", "flatten", "global_avgpool", "gradcheck", "load_weights", "log_softmax",
    "maxpool2d", "no_grad", "one_hot", "relative_error", "relu", "save_weights", "sigmoid",
    "sigmoid_cross_entropy", "softmax", "softmax_cross_entropy",
]
