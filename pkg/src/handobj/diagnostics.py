"""Finite-difference gradient suite over every differentiable op and the full pipeline.

Each case builds seeded float64 inputs and returns the worst relative error
from :func:`handobj.nn.grad_check`.  Ops must stay below ``OP_TOL``; the
end-to-end pipeline loss below ``E2E_TOL``.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .config import toy
from .dense_decoder import DenseDecoder, pixel_aligned_features
from .geometry import CameraParams, bilinear_sample, knn_indices, project_points, to_local_frames
from .hand import HandEncoder
from .image_encoder import FeatureRefiner, PatchTransformer
from .metrics import chamfer_distance, total_loss
from .nn import ops
from .nn.gradcheck import FD_STEP, grad_check, projection_loss
from .nn.layers import TransformerBlock
from .sparse_decoder import SparseDecoder

OP_TOL = 1e-4
E2E_TOL = 1e-3
F64 = torch.float64


def _gen(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def _randn(g, *shape, scale=1.0):
    return (torch.randn(*shape, generator=g, dtype=F64) * scale)


def _check(fn, inputs, name, corrupt, max_entries=24):
    return grad_check(fn, inputs, name=name, corrupt=corrupt, max_entries=max_entries, step=FD_STEP)


def _module_inputs(module: torch.nn.Module, g, jitter: float = 0.02) -> dict:
    """Float64 parameters with a small seeded jitter so zero-initialised heads are generic."""
    module.to(F64)
    params = dict(module.named_parameters())
    with torch.no_grad():
        for p in params.values():
            p.add_(_randn(g, *p.shape, scale=jitter))
    return params


def case_linear(corrupt=False):
    g = _gen(1)
    x, w, b = _randn(g, 4, 5), _randn(g, 5, 3), _randn(g, 3)
    return _check(lambda: projection_loss(ops.linear(x, w, b)), [x, w, b], "linear", corrupt)


def case_relu(corrupt=False):
    g = _gen(2)
    x = _randn(g, 6, 5)
    x = torch.where(x.abs() < 0.05, x + 0.1, x)  # keep clear of the kink
    return _check(lambda: projection_loss(ops.relu(x)), [x], "relu", corrupt)


def case_gelu(corrupt=False):
    x = _randn(_gen(3), 6, 5)
    return _check(lambda: projection_loss(ops.gelu(x)), [x], "gelu", corrupt)


def case_layer_norm(corrupt=False):
    g = _gen(4)
    x, w, b = _randn(g, 3, 8), 1 + _randn(g, 8, scale=0.1), _randn(g, 8)
    return _check(lambda: projection_loss(ops.layer_norm(x, w, b)), [x, w, b], "layer_norm", corrupt)


def _attn_params(g, d, dkv=None):
    dkv = dkv or d
    shapes = {"wq": (d, d), "bq": (d,), "wk": (dkv, d), "bk": (d,), "wv": (dkv, d), "bv": (d,), "wo": (d, d), "bo": (d,)}
    return {k: _randn(g, *s, scale=0.5) for k, s in shapes.items()}


def case_attention(corrupt=False):
    g = _gen(5)
    q, kv = _randn(g, 2, 4, 8), _randn(g, 2, 6, 8)
    p = _attn_params(g, 8)
    fn = lambda: projection_loss(ops.multi_head_attention(q, kv, p, heads=2))
    return _check(fn, {"q": q, "kv": kv, **p}, "attention", corrupt)


def case_masked_attention(corrupt=False):
    g = _gen(6)
    q, kv = _randn(g, 1, 5, 8), _randn(g, 1, 7, 8)
    p = _attn_params(g, 8)
    mask = torch.rand(1, 5, 7, generator=g) < 0.5
    mask[..., 0] = True
    fn = lambda: projection_loss(ops.multi_head_attention(q, kv, p, heads=2, neighbor_mask=mask))
    return _check(fn, {"q": q, "kv": kv, **p}, "masked_attention", corrupt)


def case_gather_attention(corrupt=False):
    g = _gen(7)
    q, kv = _randn(g, 2, 5, 8), _randn(g, 2, 9, 8)
    p = _attn_params(g, 8)
    nbrs = torch.stack([torch.randperm(9, generator=g)[:4] for _ in range(10)]).reshape(2, 5, 4)
    fn = lambda: projection_loss(ops.gather_attention(q, kv, nbrs, p, heads=2))
    return _check(fn, {"q": q, "kv": kv, **p}, "gather_attention", corrupt)


def case_conv3x3(corrupt=False):
    g = _gen(8)
    x, w, b = _randn(g, 2, 4, 4, 3), _randn(g, 3, 3, 3, 5), _randn(g, 5)
    return _check(lambda: projection_loss(ops.conv_grid_3x3(x, w, b)), [x, w, b], "conv3x3", corrupt)


def case_conv_pointwise(corrupt=False):
    g = _gen(9)
    x, w, b = _randn(g, 2, 7, 3), _randn(g, 3, 4), _randn(g, 4)
    return _check(lambda: projection_loss(ops.conv_pointwise(x, w, b)), [x, w, b], "conv_pointwise", corrupt)


def case_max_pool(corrupt=False):
    x = _randn(_gen(10), 2, 9, 4)
    return _check(lambda: projection_loss(ops.max_pool_points(x)), [x], "max_pool", corrupt)


def case_upsample(corrupt=False):
    x = _randn(_gen(11), 2, 5, 3)
    return _check(lambda: projection_loss(ops.bilinear_upsample_points(x, 4)), [x], "bilinear_upsample", corrupt)


def case_project(corrupt=False):
    g = _gen(12)
    p = _randn(g, 6, 3, scale=0.05) + torch.tensor([0.0, 0.0, 0.4], dtype=F64)
    cam = CameraParams(80.0, (32.0, 30.0), (64, 64), (0.01, -0.02, 0.03), 1.1)
    return _check(lambda: projection_loss(project_points(p, cam) / 64.0), [p], "project_points", corrupt)


def case_bilinear_sample(corrupt=False):
    g = _gen(13)
    grid = _randn(g, 4, 4, 3)
    uv = torch.rand(10, 2, generator=g, dtype=F64) * 56 + 4
    return _check(lambda: projection_loss(bilinear_sample(grid, uv, (64, 64))), [grid, uv], "bilinear_sample", corrupt)


def case_local_frames(corrupt=False):
    g = _gen(14)
    v = _randn(g, 8, 3, scale=0.05)
    q, _ = torch.linalg.qr(_randn(g, 4, 3, 3))
    R = q * torch.sign(torch.linalg.det(q))[:, None, None]
    O = _randn(g, 4, 3, scale=0.05)
    fn = lambda: projection_loss(to_local_frames(v, (R, O), check=False))
    return _check(fn, {"v": v, "O": O}, "to_local_frames", corrupt)


def case_chamfer(corrupt=False):
    g = _gen(15)
    a, b = _randn(g, 2, 20, 3, scale=0.03), _randn(g, 2, 25, 3, scale=0.03)
    return _check(lambda: chamfer_distance(a, b).sum(), [a, b], "chamfer_distance", corrupt)


def case_pixel_aligned(corrupt=False):
    g = _gen(16)
    pts = _randn(g, 1, 10, 3, scale=0.02)
    t_p = torch.tensor([[0.0, 0.0, 0.35]], dtype=F64)
    t_o = _randn(g, 1, 3, scale=0.01)
    fmap = _randn(g, 1, 4, 4, 5)
    cam = CameraParams(80.0, (32.0, 32.0), (64, 64))
    fn = lambda: projection_loss(pixel_aligned_features(pts, t_p, t_o, cam, fmap))
    return _check(fn, {"points": pts, "t_o": t_o, "features": fmap}, "pixel_aligned_features", corrupt)


def case_transformer_block(corrupt=False):
    g = _gen(17)
    torch.manual_seed(17)
    block = TransformerBlock(8, 2, 2.0, cross=True)
    params = _module_inputs(block, g)
    x, ctx = _randn(g, 1, 4, 8), _randn(g, 1, 5, 8)
    return _check(lambda: projection_loss(block(x, ctx)), {"x": x, "ctx": ctx, **params}, "transformer_block", corrupt, 6)


def case_hand_encoder(corrupt=False):
    g = _gen(18)
    torch.manual_seed(18)
    enc = HandEncoder((4, 4, 6, 6, 8))
    params = _module_inputs(enc, g)
    e = _randn(g, 1, 12, 67)
    return _check(lambda: projection_loss(enc(e)), {"e_h": e, **params}, "hand_encoder", corrupt, 6)


def case_image_encoder(corrupt=False):
    g = _gen(19)
    torch.manual_seed(19)
    vit, ref = PatchTransformer(8, 4, 8, 1, 2, 2.0), FeatureRefiner(8, 4, 2)
    params = {**_module_inputs(vit, g), **{f"ref.{k}": v for k, v in _module_inputs(ref, g).items()}}
    img = torch.rand(1, 8, 8, 3, generator=g, dtype=F64)
    fn = lambda: projection_loss(ref(vit(img)))
    return _check(fn, {"image": img, **params}, "image_encoder", corrupt, 4)


def case_sparse_decoder(corrupt=False):
    g = _gen(20)
    torch.manual_seed(20)
    dec = SparseDecoder(6, 8, 1, 2, 8, 4)
    params = _module_inputs(dec, g)
    f_v, f_h = _randn(g, 1, 5, 8), _randn(g, 1, 4)
    fn = lambda: sum(projection_loss(o, i) for i, o in enumerate(dec(f_v, f_h)))
    return _check(fn, {"f_v": f_v, "f_h": f_h, **params}, "sparse_decoder", corrupt, 4)


def case_dense_decoder(corrupt=False):
    g = _gen(21)
    torch.manual_seed(21)
    dec = DenseDecoder((2, 4), 8, 4, 2, k=4)
    params = _module_inputs(dec, g)
    sparse = _randn(g, 1, 6, 3, scale=0.03)
    t_o = _randn(g, 1, 3, scale=0.01)
    palm = torch.tensor([[0.0, 0.0, 0.35]], dtype=F64)
    hand = palm[:, None, :] + _randn(g, 1, 5, 3, scale=0.04)
    fmap = _randn(g, 1, 4, 4, 4)
    cam = CameraParams(80.0, (32.0, 32.0), (64, 64))
    fn = lambda: projection_loss(dec(sparse, t_o, palm, hand, cam, fmap))
    return _check(fn, {"sparse": sparse, "t_o": t_o, "features": fmap, **params}, "dense_decoder", corrupt, 3)


def case_end_to_end(corrupt=False):
    """Total loss of the full toy-scale pipeline (16x16 image, 16 sparse points)."""
    from .model import build_model, collate
    from .synth import generate_scene

    config = dataclasses.replace(toy(), precision="float64")
    samples = [generate_scene(i, config) for i in range(2)]
    model = build_model(config)
    params = _module_inputs(model, _gen(22), jitter=0.01)
    batch = collate(samples, config)
    fn = lambda: total_loss(model(batch), batch.target)[0]
    return _check(fn, {"image": batch.image, **params}, "end_to_end", corrupt, 2)


OPS: dict[str, Callable[..., float]] = {
    "linear": case_linear,
    "relu": case_relu,
    "gelu": case_gelu,
    "layer_norm": case_layer_norm,
    "attention": case_attention,
    "masked_attention": case_masked_attention,
    "gather_attention": case_gather_attention,
    "conv3x3": case_conv3x3,
    "conv_pointwise": case_conv_pointwise,
    "max_pool": case_max_pool,
    "bilinear_upsample": case_upsample,
    "project_points": case_project,
    "bilinear_sample": case_bilinear_sample,
    "to_local_frames": case_local_frames,
    "chamfer_distance": case_chamfer,
    "pixel_aligned_features": case_pixel_aligned,
    "transformer_block": case_transformer_block,
    "hand_encoder": case_hand_encoder,
    "image_encoder": case_image_encoder,
    "sparse_decoder": case_sparse_decoder,
    "dense_decoder": case_dense_decoder,
    "end_to_end": case_end_to_end,
}


def tolerance(name: str) -> float:
    return E2E_TOL if name == "end_to_end" else OP_TOL


@dataclasses.dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def run_suite(names: Optional[Sequence[str]] = None, corrupt: Sequence[str] = ()) -> list[CheckResult]:
    names = list(names) if names else list(OPS)
    unknown = [n for n in list(names) + list(corrupt) if n not in OPS]
    if unknown:
        raise KeyError(f"unknown gradcheck ops {unknown}; available: {sorted(OPS)}")
    results = []
    for name in names:
        t = time.perf_counter()
        err = OPS[name](corrupt=name in corrupt)
        results.append(CheckResult(name, err, tolerance(name), time.perf_counter() - t))
    return results
