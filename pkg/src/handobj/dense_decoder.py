"""Coarse-to-fine upsampling of the sparse cloud with pixel-aligned features.

Object points live in the canonical frame (camera orientation, origin at the
object centroid).  A canonical point ``p`` sits at ``p + t_p + t_o`` in the
camera frame, where ``t_p`` is the palm and ``t_o`` the predicted offset.
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .geometry import CameraParams, bilinear_sample, knn_indices, project_points
from .nn import ops
from .nn.layers import FeedForward, LayerNorm, Linear, MultiHeadAttention, PointMLP, trunc_normal

COORD_WIDTHS = (64, 128)


def pixel_aligned_features(points, t_p, t_o, cam: CameraParams, feature_map: torch.Tensor) -> torch.Tensor:
    """Features [..,N,C] sampled where canonical points [..,N,3] project into the image."""
    t_p = torch.as_tensor(t_p, dtype=points.dtype)
    t_o = torch.as_tensor(t_o, dtype=points.dtype)
    if t_p.ndim == 2:
        t_p, t_o = t_p[:, None, :], t_o[:, None, :]
    uv = project_points(points + t_p + t_o, cam)
    return bilinear_sample(feature_map, uv, cam.image_size)


class LocalAttentionLayer(nn.Module):
    """Pre-norm attention of object tokens over their k nearest object/hand tokens."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.norm_q = LayerNorm(dim)
        self.norm_kv = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm_ff = LayerNorm(dim)
        self.mlp = FeedForward(dim, int(dim * mlp_ratio))

    def forward(self, x, hand, neighbors):
        kv = self.norm_kv(torch.cat([x, hand], dim=1))
        x = x + self.attn.local(self.norm_q(x), kv, neighbors)
        return x + self.mlp(self.norm_ff(x))

    def attention_weights(self, x, hand, neighbors) -> torch.Tensor:
        """Dense per-head weights [B,H,N,N+Nh] via the masked full-attention path."""
        kv = self.norm_kv(torch.cat([x, hand], dim=1))
        mask = neighbor_mask(neighbors, kv.shape[1])
        _, w = self.attn(self.norm_q(x), kv, neighbor_mask=mask, return_weights=True)
        return w

    def masked_forward(self, x, hand, neighbors):
        kv = self.norm_kv(torch.cat([x, hand], dim=1))
        mask = neighbor_mask(neighbors, kv.shape[1])
        x = x + self.attn(self.norm_q(x), kv, neighbor_mask=mask)
        return x + self.mlp(self.norm_ff(x))


def neighbor_mask(neighbors: torch.Tensor, n_keys: int) -> torch.Tensor:
    B, N, _ = neighbors.shape
    mask = torch.zeros(B, N, n_keys, dtype=torch.bool)
    mask.scatter_(2, neighbors, True)
    return mask


class UpsampleBlock(nn.Module):
    def __init__(
        self,
        factor: int,
        dim: int,
        image_channels: int,
        prev_dim: int,
        heads: int,
        k: int,
        attn_layers: int = 1,
        coord_scale: float = 0.1,
    ):
        super().__init__()
        self.factor, self.k, self.coord_scale, self.prev_dim = factor, k, coord_scale, prev_dim
        self.coord_mlp = PointMLP((3, *COORD_WIDTHS))
        c = COORD_WIDTHS[-1]
        self.object_in = Linear(2 * c + image_channels + prev_dim, dim)
        self.hand_in = Linear(2 * c + image_channels, dim)
        self.hand_type = trunc_normal(dim)
        self.layers = nn.ModuleList(LocalAttentionLayer(dim, heads) for _ in range(attn_layers))
        self.child = trunc_normal(factor, dim)
        self.offset_mlp = PointMLP((dim, dim // 2, dim // 4, 3), zero_last=True)

    def _point_features(self, pts):
        local = self.coord_mlp(pts / self.coord_scale)
        glob = ops.max_pool_points(local)
        return torch.cat([local, glob.unsqueeze(-2).expand_as(local)], dim=-1)

    def tokens(self, points, feats, f_o, hand_points, f_hand):
        obj = [self._point_features(points), f_o]
        if self.prev_dim:
            obj.append(feats)
        x = self.object_in(torch.cat(obj, dim=-1))
        h = self.hand_in(torch.cat([self._point_features(hand_points), f_hand], dim=-1)) + self.hand_type
        return x, h

    def neighbors(self, points, hand_points) -> torch.Tensor:
        n_avail = points.shape[1] + hand_points.shape[1]
        if self.k > n_avail:
            raise ValueError(f"k={self.k} exceeds the {n_avail} available neighbour tokens")
        union = torch.cat([points, hand_points], dim=1).detach()
        return knn_indices(union, self.k, n_queries=points.shape[1])

    def forward(self, points, feats, f_o, hand_points, f_hand):
        """Returns ``(points [B,N*factor,3], features [B,N*factor,dim])``."""
        x, h = self.tokens(points, feats, f_o, hand_points, f_hand)
        nbrs = self.neighbors(points, hand_points)
        for layer in self.layers:
            x = layer(x, h, nbrs)
        up = ops.bilinear_upsample_points(x, self.factor) + self.child.repeat(points.shape[1], 1)
        offsets = self.offset_mlp(up) * self.coord_scale
        parents = torch.repeat_interleave(points, self.factor, dim=1)
        return parents + offsets, up


class DenseDecoder(nn.Module):
    def __init__(
        self,
        factors: Sequence[int],
        dim: int,
        image_channels: int,
        heads: int,
        k: int = 16,
        attn_layers: int = 1,
        coord_scale: float = 0.1,
    ):
        super().__init__()
        self.blocks = nn.ModuleList(
            UpsampleBlock(f, dim, image_channels, 0 if i == 0 else dim, heads, k, attn_layers, coord_scale)
            for i, f in enumerate(factors)
        )

    def forward(self, sparse, t_o, palm, hand_vertices, cam: CameraParams, feature_map, return_stages=False):
        """Upsample canonical ``sparse`` [B,N,3] to [B, N*prod(factors), 3].

        ``hand_vertices`` [B,Vh,3] are camera-frame context points; they are
        attended to but never upsampled or emitted.
        """
        hand_uv = project_points(hand_vertices, cam)
        f_hand = bilinear_sample(feature_map, hand_uv, cam.image_size)
        hand_points = hand_vertices - palm[:, None, :] - t_o[:, None, :]
        points, feats = sparse, None
        stages = []
        for block in self.blocks:
            f_o = pixel_aligned_features(points, palm, t_o, cam, feature_map)
            points, feats = block(points, feats, f_o, hand_points, f_hand)
            stages.append(points)
        return (points, stages) if return_stages else points
