"""Minimal reverse-mode autodiff engine with the layers a small U-Net needs."""

from .gradcheck import GradCheckReport, gradient_check, gradient_check_report
from .layers import (
    NoRunningStatsError,
    batch_norm,
    bilinear_up2,
    concat_channels,
    conv2d,
    leaky_relu,
    max_pool2,
    take_batch,
)
from .params import CheckpointError, ParamStore
from .tensor import Tensor, abs_sum, absolute, add, mean, mul, sub, total

__all__ = [
    "Tensor",
    "ParamStore",
    "CheckpointError",
    "NoRunningStatsError",
    "gradient_check",
    "gradient_check_report",
    "GradCheckReport",
    "conv2d",
    "batch_norm",
    "leaky_relu",
    "max_pool2",
    "bilinear_up2",
    "concat_channels",
    "take_batch",
    "add",
    "sub",
    "mul",
    "absolute",
    "mean",
    "total",
    "abs_sum",
]
