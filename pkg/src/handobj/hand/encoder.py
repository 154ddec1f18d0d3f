"""PointNet hand encoder: five shared per-point layers and a max-pool."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from ..nn import ops
from ..nn.layers import PointMLP

EMBED_DIM = 67
PAPER_WIDTHS = (64, 128, 256, 512, 1024)


class HandEncoder(nn.Module):
    def __init__(self, widths: Sequence[int] = PAPER_WIDTHS, in_dim: int = EMBED_DIM):
        super().__init__()
        if len(widths) != 5:
            raise ValueError(f"hand encoder has five layers, got widths {tuple(widths)}")
        self.mlp = PointMLP((in_dim, *widths))
        self.out_dim = widths[-1]

    def forward(self, e_h: torch.Tensor) -> torch.Tensor:
        """[.., V, 67] -> [.., out_dim]"""
        if e_h.shape[-2] == 0:
            raise ValueError("hand encoder got an empty vertex set")
        return ops.max_pool_points(self.mlp(e_h))


def encode_hand(e_h: torch.Tensor, encoder: HandEncoder) -> torch.Tensor:
    return encoder(e_h)
