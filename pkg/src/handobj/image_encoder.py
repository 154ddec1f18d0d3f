"""Patch transformer trained from scratch, and the 3x3-conv feature-map refiner."""

from __future__ import annotations

import math

import torch
from torch import nn

from .nn import ops
from .nn.layers import GridConv3x3, LayerNorm, Linear, TransformerBlock, trunc_normal


class PatchTransformer(nn.Module):
    """Image [B,H,W,3] in [0,1] -> tokens [B, 1 + (H/patch)^2, dim] (class token first)."""

    def __init__(self, image_size: int, patch: int, dim: int, layers: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        if image_size % patch:
            raise ValueError(f"image size {image_size} is not divisible by patch size {patch}")
        self.image_size, self.patch = image_size, patch
        self.grid = image_size // patch
        self.n_patches = self.grid ** 2
        self.embed = Linear(patch * patch * 3, dim)
        self.cls = trunc_normal(dim)
        self.pos = trunc_normal(1 + self.n_patches, dim)
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads, mlp_ratio) for _ in range(layers))
        self.norm = LayerNorm(dim)

    def patchify(self, img: torch.Tensor) -> torch.Tensor:
        *lead, H, W, C = img.shape
        if H != W or H % self.patch or H != self.image_size:
            raise ValueError(
                f"expected a square {self.image_size}px image divisible by patch {self.patch}, got {H}x{W}"
            )
        g, p = H // self.patch, self.patch
        x = img.reshape(*lead, g, p, g, p, C).transpose(-4, -3)
        return x.reshape(*lead, g * g, p * p * C)

    def embed_patches(self, img: torch.Tensor) -> torch.Tensor:
        """Patch embeddings before position codes and attention: [.., P, dim]."""
        return self.embed((self.patchify(img) - 0.5) / 0.25)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        x = self.embed_patches(img)
        cls = self.cls.expand(*x.shape[:-2], 1, -1)
        x = torch.cat([cls, x], dim=-2) + self.pos
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


class FeatureRefiner(nn.Module):
    """Drop the class token, fold patch tokens into a grid, apply 3x3 convs."""

    def __init__(self, dim: int, channels: int, layers: int = 2):
        super().__init__()
        widths = [dim] + [channels] * layers
        self.convs = nn.ModuleList(GridConv3x3(a, b) for a, b in zip(widths[:-1], widths[1:]))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        patches = tokens[..., 1:, :]
        p = patches.shape[-2]
        g = math.isqrt(p)
        if g * g != p:
            raise ValueError(f"{p} patch tokens do not form a square grid")
        x = patches.reshape(*patches.shape[:-2], g, g, patches.shape[-1])
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = ops.relu(x)
        return x
