"""Joint translation + sparse point-cloud decoder over learnable tokens."""

from __future__ import annotations

import torch
from torch import nn

from .nn.layers import LayerNorm, Linear, TransformerBlock, trunc_normal


class SparseDecoder(nn.Module):
    """Token 0 predicts the palm-relative object translation; tokens 1..N predict points.

    Each layer runs self-attention over the tokens, then cross-attention to the
    context (image tokens plus one token projected from the hand feature), then
    an MLP.  Both heads start at zero.  ``coord_scale`` is the length (metres)
    of one output unit.
    """

    def __init__(
        self,
        n_points: int,
        dim: int,
        layers: int,
        heads: int,
        image_dim: int,
        hand_dim: int,
        coord_scale: float = 0.1,
        mlp_ratio: float = 4.0,
    ):
        super().__init__()
        self.n_points = n_points
        self.coord_scale = coord_scale
        self.tokens = trunc_normal(1 + n_points, dim)
        self.image_proj = Linear(image_dim, dim)
        self.hand_proj = Linear(hand_dim, dim)
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads, mlp_ratio, cross=True) for _ in range(layers))
        self.norm = LayerNorm(dim)
        self.translation_head = Linear(dim, 3, zero_init=True)
        self.point_head = Linear(dim, 3, zero_init=True)

    def context(self, f_v: torch.Tensor, f_h: torch.Tensor) -> torch.Tensor:
        if f_v.shape[-2] == 0:
            raise ValueError("sparse decoder context is empty")
        return torch.cat([self.image_proj(f_v), self.hand_proj(f_h).unsqueeze(-2)], dim=-2)

    def forward(self, f_v: torch.Tensor, f_h: torch.Tensor):
        """``f_v`` [B,T,Di], ``f_h`` [B,Dh] -> (t_o [B,3], p_s [B,N,3]) in metres."""
        ctx = self.context(f_v, f_h)
        x = self.tokens.expand(ctx.shape[0], -1, -1)
        for block in self.blocks:
            x = block(x, ctx)
        x = self.norm(x)
        t_o = self.translation_head(x[:, 0]) * self.coord_scale
        points = self.point_head(x[:, 1:]) * self.coord_scale
        return t_o, points
