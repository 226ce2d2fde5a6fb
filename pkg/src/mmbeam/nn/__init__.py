"""Small numpy neural-network engine: layers, losses, Adam, gradient checks."""
from .functional import (
    conv1d_forward,
    conv2d_forward,
    cross_entropy,
    masked_global_max,
    maxpool1d_forward,
    relu,
    sigmoid,
    silu,
    softmax,
    softmax_cross_entropy,
)
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    BatchNorm,
    Conv1d,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Flatten,
    GlobalAvgPool2d,
    MaxPool1d,
    Module,
    Param,
    ReLU,
    Sequential,
    Sigmoid,
    SiLU,
    warn_disconnected,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "BatchNorm", "Conv1d", "Conv2d", "Dense", "DepthwiseConv2d", "Flatten",
    "GlobalAvgPool2d", "GradCheckReport", "MaxPool1d", "Module", "Param", "ReLU", "Sequential",
    "SiLU", "Sigmoid", "adam_step", "conv1d_forward", "conv2d_forward", "cross_entropy",
    "grad_check", "masked_global_max", "maxpool1d_forward", "relu", "sigmoid", "silu", "softmax",
    "softmax_cross_entropy", "warn_disconnected",
]
