"""Dense float64 kernel: affine and LSTM layers, losses, Adam, checkpoints."""

from .checkpoint import load_params, save_params
from .layers import LSTM, Affine, ReLU, lstm_cell_step, sigmoid
from .losses import (
    expectile_loss,
    logsumexp,
    mse,
    sigmoid_cross_entropy,
    softmax,
    softmax_cross_entropy,
)
from .optim import Adam, AdamState, adam_update, clip_grad_norm
from .tensor import Module, ParamTensor

__all__ = [
    "Adam",
    "AdamState",
    "Affine",
    "LSTM",
    "Module",
    "ParamTensor",
    "ReLU",
    "adam_update",
    "clip_grad_norm",
    "expectile_loss",
    "load_params",
    "logsumexp",
    "lstm_cell_step",
    "mse",
    "save_params",
    "sigmoid",
    "sigmoid_cross_entropy",
    "softmax",
    "softmax_cross_entropy",
]
