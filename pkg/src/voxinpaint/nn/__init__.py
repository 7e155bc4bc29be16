"""Minimal numpy autodiff engine sized for the 2D/3D U-Nets."""

from .layers import Conv, ConvTranspose, Linear, Module, Parameter, TimeEmbedding, sinusoidal_embedding
from .losses import bce_loss, l1_loss_masked, masked_mse_loss, mse_loss
from .optim import Adam, AdamConfig, PlateauSchedulerState, adam_step, plateau_step
from .tensor import (
    NonFiniteError,
    Tensor,
    add,
    avg_pool,
    backward,
    concat,
    conv,
    conv_transpose,
    linear,
    max_pool,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    sub,
    transpose,
)
from .tensor import sum as tsum

__all__ = [
    "Adam", "AdamConfig", "Conv", "ConvTranspose", "Linear", "Module", "NonFiniteError",
    "Parameter", "PlateauSchedulerState", "Tensor", "TimeEmbedding", "adam_step", "add",
    "avg_pool", "backward", "bce_loss", "concat", "conv", "conv_transpose", "l1_loss_masked",
    "linear", "masked_mse_loss", "max_pool", "mean", "mse_loss", "mul", "plateau_step",
    "relu", "reshape", "sigmoid", "sinusoidal_embedding", "sub", "transpose", "tsum",
]
