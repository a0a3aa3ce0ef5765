"""Differentiable layer set, optimizer and schedule used by both networks."""
from .checkpoint import load_tensors, save_tensors
from .kernels import BACKEND
from .layers import (BatchNorm1d, DepthwiseConv1d, GlobalAvgPool, Linear, Module,
                     Parameter, PointwiseConv1d, ReLU, SeparableBlock, Tanh,
                     log_softmax, residual_add, softmax_cross_entropy)
from .optim import LrSchedule, SgdConfig, lr_at, sgd_step

__all__ = [
    "BACKEND", "BatchNorm1d", "DepthwiseConv1d", "GlobalAvgPool", "Linear", "LrSchedule",
    "Module", "Parameter", "PointwiseConv1d", "ReLU", "SeparableBlock", "SgdConfig", "Tanh",
    "load_tensors", "log_softmax", "lr_at", "residual_add", "save_tensors", "sgd_step",
    "softmax_cross_entropy",
]
