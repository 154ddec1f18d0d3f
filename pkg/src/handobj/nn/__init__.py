"""Differentiable operator set and layers; gradients via torch autograd."""

from .gradcheck import GradCheckError, analytic_gradients, grad_check, projection_loss
from .ops import (
    DimensionError,
    bilinear_upsample_points,
    conv_grid_3x3,
    conv_pointwise,
    gather_attention,
    gelu,
    layer_norm,
    linear,
    max_pool_points,
    multi_head_attention,
    relu,
)

__all__ = [
    "DimensionError",
    "GradCheckError",
    "analytic_gradients",
    "bilinear_upsample_points",
    "conv_grid_3x3",
    "conv_pointwise",
    "gather_attention",
    "gelu",
    "grad_check",
    "layer_norm",
    "linear",
    "max_pool_points",
    "multi_head_attention",
    "projection_loss",
    "relu",
]
