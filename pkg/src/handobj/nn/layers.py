"""Parameterised building blocks over :mod:`handobj.nn.ops`."""

from __future__ import annotations

from typing import Optional, Sequence

import torch
from torch import nn

from . import ops

INIT_STD = 0.02


def trunc_normal(*shape: int) -> nn.Parameter:
    p = torch.empty(*shape)
    nn.init.trunc_normal_(p, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
    return nn.Parameter(p)


def zeros(*shape: int) -> nn.Parameter:
    return nn.Parameter(torch.zeros(*shape))


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.weight = zeros(d_in, d_out) if zero_init else trunc_normal(d_in, d_out)
        self.bias = zeros(d_out) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = zeros(dim)

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, kv_dim: Optional[int] = None):
        super().__init__()
        if dim % heads:
            raise ops.DimensionError(f"attention width {dim} is not divisible by {heads} heads")
        kv_dim = kv_dim or dim
        self.heads = heads
        self.wq, self.bq = trunc_normal(dim, dim), zeros(dim)
        self.wk, self.bk = trunc_normal(kv_dim, dim), zeros(dim)
        self.wv, self.bv = trunc_normal(kv_dim, dim), zeros(dim)
        self.wo, self.bo = trunc_normal(dim, dim), zeros(dim)

    def projections(self) -> dict:
        return {n: getattr(self, n) for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}

    def forward(self, q, kv, neighbor_mask=None, return_weights=False):
        return ops.multi_head_attention(q, kv, self.projections(), self.heads, neighbor_mask, return_weights)

    def local(self, q, kv, neighbors):
        return ops.gather_attention(q, kv, neighbors, self.projections(), self.heads)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm block: self-attention, optional cross-attention, GELU MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0, cross: bool = False):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.cross = cross
        if cross:
            self.norm_q = LayerNorm(dim)
            self.norm_ctx = LayerNorm(dim)
            self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm2 = LayerNorm(dim)
        self.mlp = FeedForward(dim, int(dim * mlp_ratio))

    def forward(self, x, context=None):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        if self.cross:
            if context is None or context.shape[-2] == 0:
                raise ValueError("cross-attention block needs a non-empty context")
            x = x + self.cross_attn(self.norm_q(x), self.norm_ctx(context))
        return x + self.mlp(self.norm2(x))


class PointMLP(nn.Module):
    """Stack of shared per-point layers with ReLU between them."""

    def __init__(self, widths: Sequence[int], final_activation: bool = False, zero_last: bool = False):
        super().__init__()
        self.layers = nn.ModuleList()
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            self.layers.append(Linear(a, b, zero_init=zero_last and last))
        self.final_activation = final_activation

    def forward(self, x):
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = ops.conv_pointwise(x, layer.weight, layer.bias)
            if i < n - 1 or self.final_activation:
                x = ops.relu(x)
        return x


class GridConv3x3(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.weight = trunc_normal(3, 3, c_in, c_out)
        self.bias = zeros(c_out)

    def forward(self, x):
        return ops.conv_grid_3x3(x, self.weight, self.bias)

