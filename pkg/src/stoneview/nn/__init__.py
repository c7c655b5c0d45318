"""Numeric core: layers with explicit backward passes, Adam, finite-difference
gradient checking, and the hot-kernel backend (compiled or pure numpy)."""

from .kernels import BACKEND
from .layers import (
    BatchNorm,
    Conv2d,
    Dropout,
    GlobalAvgPool2d,
    Identity,
    Linear,
    MaxPool2d,
    Module,
    ModuleList,
    Param,
    ReLU,
    Sequential,
    Sigmoid,
    fan_in_uniform,
    seed_dropout,
    sigmoid,
)
from .losses import cross_entropy, softmax
from .optim import Adam
from .gradcheck import GradCheckReport, check_gradients, projection_loss

__all__ = [
    "BACKEND",
    "Adam",
    "BatchNorm",
    "Conv2d",
    "Dropout",
    "GlobalAvgPool2d",
    "GradCheckReport",
    "Identity",
    "Linear",
    "MaxPool2d",
    "Module",
    "ModuleList",
    "Param",
    "ReLU",
    "Sequential",
    "Sigmoid",
    "check_gradients",
    "cross_entropy",
    "fan_in_uniform",
    "projection_loss",
    "seed_dropout",
    "sigmoid",
    "softmax",
]
