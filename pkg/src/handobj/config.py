"""Run configuration with desk, paper and toy presets.

Every field is documented in the README's configuration table.  Config files
are JSON objects holding any subset of the fields plus an optional
``"preset"`` key naming the starting preset.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional


@dataclass(frozen=True)
class RunConfig:
    # images and hand
    image_size: int = 64
    patch_size: int = 8
    hand_vertices: int = 778
    hand_context_tokens: int = 64
    # image encoder
    vit_dim: int = 128
    vit_layers: int = 6
    vit_heads: int = 4
    mlp_ratio: float = 4.0
    refine_channels: int = 128
    refine_layers: int = 2
    # hand encoder
    hand_widths: tuple = (64, 128, 128, 256, 256)
    use_hand_encoder: bool = True
    # sparse decoder
    n_sparse: int = 256
    sparse_dim: int = 256
    sparse_layers: int = 4
    sparse_heads: int = 4
    # dense decoder
    upsample_factors: tuple = (2, 4)
    dense_dim: int = 128
    dense_heads: int = 4
    dense_attn_layers: int = 1
    knn_k: int = 16
    coord_scale: float = 0.1
    # optimisation
    base_lr: float = 1e-4
    steps: int = 2000
    batch_size: int = 8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_pose: float = 2.0
    lambda_sparse: float = 2.0
    augment: bool = True
    checkpoint_every: int = 0
    log_every: int = 50
    seed: int = 0
    precision: str = "float32"
    # data and evaluation
    data_dir: Optional[str] = None
    render_points: int = 1500
    n_eval_points: int = 4096
    contact_eps: float = 0.005

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("hand_widths", "upsample_factors"):
                object.__setattr__(self, f.name, tuple(int(x) for x in v))
        ints = [f.name for f in fields(self) if f.type in ("int",) and f.name not in ("checkpoint_every", "seed", "log_every")]
        bad = [n for n in ints if getattr(self, n) <= 0]
        if bad:
            raise ValueError(f"config dims must be positive: {bad}")
        if any(x <= 0 for x in self.hand_widths + self.upsample_factors):
            raise ValueError("hand_widths and upsample_factors must be positive")
        if self.n_dense != 8 * self.n_sparse:
            raise ValueError(f"upsample factors {self.upsample_factors} must multiply to 8")
        if self.image_size % self.patch_size:
            raise ValueError(f"image size {self.image_size} not divisible by patch {self.patch_size}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")

    @property
    def n_dense(self) -> int:
        return self.n_sparse * math.prod(self.upsample_factors)

    @property
    def hand_feature_dim(self) -> int:
        return self.hand_widths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hand_widths"] = list(self.hand_widths)
        d["upsample_factors"] = list(self.upsample_factors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        base = PRESETS[d.pop("preset", "desk")]()
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return replace(base, **d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def model_dict(self) -> dict:
        """Fields that fix parameter shapes (checked when loading checkpoints)."""
        keys = (
            "image_size", "patch_size", "hand_vertices", "hand_context_tokens", "vit_dim", "vit_layers",
            "vit_heads", "refine_channels", "refine_layers", "hand_widths", "n_sparse", "sparse_dim",
            "sparse_layers", "sparse_heads", "upsample_factors", "dense_dim", "dense_heads",
            "dense_attn_layers", "knn_k", "mlp_ratio",
        )
        d = self.to_dict()
        return {k: d[k] for k in keys}


def desk() -> RunConfig:
    return RunConfig()


def paper() -> RunConfig:
    """Published dimensions; constructible for shape checks, not trainable here."""
    return RunConfig(
        image_size=224, patch_size=14, hand_context_tokens=778,
        vit_dim=1024, vit_layers=24, vit_heads=16,
        hand_widths=(64, 128, 256, 512, 1024),
        n_sparse=2048, sparse_dim=512, sparse_layers=10, sparse_heads=8,
        batch_size=192, n_eval_points=30000,
    )


def toy() -> RunConfig:
    """Tiny dims for gradient checks and fast tests."""
    return RunConfig(
        image_size=16, patch_size=4, hand_vertices=64, hand_context_tokens=16,
        vit_dim=16, vit_layers=1, vit_heads=2, refine_channels=8,
        hand_widths=(8, 8, 16, 16, 16),
        n_sparse=16, sparse_dim=16, sparse_layers=1, sparse_heads=2,
        dense_dim=16, dense_heads=2, batch_size=2, steps=10, render_points=300, n_eval_points=256,
    )


PRESETS = {"desk": desk, "paper": paper, "toy": toy}
