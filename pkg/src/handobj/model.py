"""Full reconstruction network and batch assembly from scene samples."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .dense_decoder import DenseDecoder
from .geometry import CameraParams, farthest_point_indices
from .hand import HandEncoder, HandState, build_hand_embedding, default_template
from .image_encoder import FeatureRefiner, PatchTransformer
from .sparse_decoder import SparseDecoder

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@lru_cache(maxsize=8)
def hand_context_indices(n_vertices: int, n_tokens: int) -> np.ndarray:
    """Template vertices kept as dense-decoder context (farthest-point order)."""
    if n_tokens >= n_vertices:
        return np.arange(n_vertices)
    return np.sort(farthest_point_indices(default_template(n_vertices).vertices, n_tokens))


@dataclass
class Batch:
    image: torch.Tensor  # B,H,W,3
    e_h: torch.Tensor  # B,V,67
    hand_context: torch.Tensor  # B,Vh,3 camera frame
    palm: torch.Tensor  # B,3
    camera: CameraParams  # batched
    sample_ids: list
    target: Optional[dict] = None  # t_o, sparse, dense (canonical)

    def __len__(self) -> int:
        return self.image.shape[0]


def collate(samples: Sequence, config: RunConfig, hands: Optional[Sequence[HandState]] = None,
            with_target: bool = True) -> Batch:
    """Stack samples; ``hands`` overrides the ground-truth hands (e.g. noisy inputs)."""
    if not samples:
        raise ValueError("cannot collate an empty batch")
    dtype = DTYPES[config.precision]
    hands = list(hands) if hands is not None else [s.hand for s in samples]
    for s, h in zip(samples, hands):
        if s.image.shape[:2] != (config.image_size, config.image_size):
            raise ValueError(f"sample {s.sample_id}: image {s.image.shape[:2]} does not match config {config.image_size}")
        if len(h.vertices) != config.hand_vertices:
            raise ValueError(f"sample {s.sample_id}: {len(h.vertices)} hand vertices, config expects {config.hand_vertices}")
    ctx = hand_context_indices(config.hand_vertices, config.hand_context_tokens)
    t = lambda xs: torch.tensor(np.stack(xs), dtype=dtype)
    target = None
    if with_target:
        target = {
            "t_o": t([s.gt_t_o for s in samples]),
            "sparse": t([s.canonical_sparse for s in samples]),
            "dense": t([s.canonical_dense for s in samples]),
        }
    return Batch(
        image=t([s.image for s in samples]),
        e_h=torch.stack([build_hand_embedding(h) for h in hands]).to(dtype),
        hand_context=t([h.vertices[ctx] for h in hands]),
        palm=t([h.palm for h in hands]),
        camera=CameraParams.stack([s.camera for s in samples], dtype=dtype),
        sample_ids=[s.sample_id for s in samples],
        target=target,
    )


class ReconstructionModel(nn.Module):
    """Image + hand -> (t_o, sparse cloud, dense cloud), clouds in the canonical frame."""

    def __init__(self, config: RunConfig):
        super().__init__()
        c = config
        self.config = c
        self.hand_encoder = HandEncoder(c.hand_widths) if c.use_hand_encoder else None
        self.image_encoder = PatchTransformer(c.image_size, c.patch_size, c.vit_dim, c.vit_layers, c.vit_heads, c.mlp_ratio)
        self.refiner = FeatureRefiner(c.vit_dim, c.refine_channels, c.refine_layers)
        self.sparse_decoder = SparseDecoder(
            c.n_sparse, c.sparse_dim, c.sparse_layers, c.sparse_heads, c.vit_dim, c.hand_feature_dim,
            c.coord_scale, c.mlp_ratio,
        )
        self.dense_decoder = DenseDecoder(
            c.upsample_factors, c.dense_dim, c.refine_channels, c.dense_heads, c.knn_k, c.dense_attn_layers,
            c.coord_scale,
        )

    def hand_feature(self, e_h: torch.Tensor) -> torch.Tensor:
        if self.hand_encoder is None:
            return e_h.new_zeros(e_h.shape[0], self.config.hand_feature_dim)
        return self.hand_encoder(e_h)

    def forward(self, batch: Batch, return_features: bool = False) -> dict:
        f_h = self.hand_feature(batch.e_h)
        f_v = self.image_encoder(batch.image)
        f_r = self.refiner(f_v)
        t_o, sparse = self.sparse_decoder(f_v, f_h)
        dense = self.dense_decoder(sparse, t_o, batch.palm, batch.hand_context, batch.camera, f_r)
        out = {"t_o": t_o, "sparse": sparse, "dense": dense}
        if return_features:
            out.update(f_h=f_h, f_v=f_v, f_r=f_r)
        return out


def build_model(config: RunConfig) -> ReconstructionModel:
    """Seeded construction: equal configs give bitwise-equal initial weights."""
    torch.manual_seed(config.seed)
    return ReconstructionModel(config).to(DTYPES[config.precision])


def to_camera_frame(cloud: torch.Tensor, palm: torch.Tensor, t_o: torch.Tensor) -> torch.Tensor:
    return cloud + palm[:, None, :] + t_o[:, None, :]
