"""Differentiable operators shared by every network in the package.

All functions take and return ``torch.Tensor`` and accept leading batch
dimensions.  Gradients come from torch's reverse-mode autograd.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional

import torch

LN_EPS = 1e-5


class DimensionError(ValueError):
    pass


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """``x @ weight + bias`` along the last dim; ``weight`` is stored ``[Din, Dout]``."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input shape {tuple(x.shape)} does not match weight shape {tuple(weight.shape)}"
        )
    y = x @ weight
    if bias is not None:
        y = y + bias
    return y


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def layer_norm(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, eps: float = LN_EPS) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    return centered / torch.sqrt(var + eps) * weight + bias


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, n, d = x.shape
    return x.reshape(*lead, n, heads, d // heads).transpose(-2, -3)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    x = x.transpose(-2, -3)
    *lead, n, h, dh = x.shape
    return x.reshape(*lead, n, h * dh)


def multi_head_attention(
    q: torch.Tensor,
    kv: torch.Tensor,
    params: Mapping[str, torch.Tensor],
    heads: int,
    neighbor_mask: Optional[torch.Tensor] = None,
    return_weights: bool = False,
):
    """Scaled dot-product attention of ``q`` [..,Nq,D] over ``kv`` [..,Nk,D].

    ``params`` holds ``wq, bq, wk, bk, wv, bv, wo, bo``.  Where ``neighbor_mask``
    is False the attention weight is exactly zero.  With ``return_weights`` the
    per-head weights [..,H,Nq,Nk] are returned alongside the output.
    """
    d_model = params["wq"].shape[1]
    if d_model % heads:
        raise DimensionError(f"attention width {d_model} is not divisible by {heads} heads")
    Q = _split_heads(linear(q, params["wq"], params["bq"]), heads)
    K = _split_heads(linear(kv, params["wk"], params["bk"]), heads)
    V = _split_heads(linear(kv, params["wv"], params["bv"]), heads)
    scores = (Q @ K.transpose(-1, -2)) / math.sqrt(d_model // heads)
    if neighbor_mask is not None:
        mask = neighbor_mask.to(torch.bool)
        if not bool(mask.any(dim=-1).all()):
            raise ValueError("attention mask leaves a query row with no visible key")
        scores = scores.masked_fill(~mask.unsqueeze(-3), float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = linear(_merge_heads(weights @ V), params["wo"], params["bo"])
    if return_weights:
        return out, weights
    return out


def gather_attention(
    q: torch.Tensor,
    kv: torch.Tensor,
    neighbors: torch.Tensor,
    params: Mapping[str, torch.Tensor],
    heads: int,
) -> torch.Tensor:
    """Attention restricted to ``neighbors`` [B,Nq,k] (indices into ``kv``'s rows).

    Same result as :func:`multi_head_attention` with the matching boolean mask
    but costs O(Nq·k) instead of O(Nq·Nk).
    """
    d_model = params["wq"].shape[1]
    if d_model % heads:
        raise DimensionError(f"attention width {d_model} is not divisible by {heads} heads")
    B, Nq, k = neighbors.shape
    dh = d_model // heads
    Q = linear(q, params["wq"], params["bq"]).reshape(B, Nq, 1, heads, dh)
    K = linear(kv, params["wk"], params["bk"])
    V = linear(kv, params["wv"], params["bv"])
    flat = neighbors.reshape(B, Nq * k, 1).expand(B, Nq * k, d_model)
    Kn = torch.gather(K, 1, flat).reshape(B, Nq, k, heads, dh)
    Vn = torch.gather(V, 1, flat).reshape(B, Nq, k, heads, dh)
    scores = (Q * Kn).sum(-1) / math.sqrt(dh)  # B,Nq,k,H
    weights = torch.softmax(scores, dim=2)
    out = (weights.unsqueeze(-1) * Vn).sum(2).reshape(B, Nq, d_model)
    return linear(out, params["wo"], params["bo"])


def conv_grid_3x3(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """3x3 convolution on a channels-last grid [..,G,G,Cin], zero padding 1, stride 1.

    ``weight`` is [3,3,Cin,Cout]; tap (a,b) reads input cell (i+a-1, j+b-1).
    """
    if x.ndim < 3 or x.shape[-2] < 1 or x.shape[-3] < 1:
        raise DimensionError(f"conv_grid_3x3: grid must be at least 1x1, got {tuple(x.shape)}")
    if x.shape[-1] != weight.shape[2]:
        raise DimensionError(
            f"conv_grid_3x3: input shape {tuple(x.shape)} does not match weight shape {tuple(weight.shape)}"
        )
    Gh, Gw = x.shape[-3], x.shape[-2]
    padded = torch.nn.functional.pad(x, (0, 0, 1, 1, 1, 1))
    out = None
    for a in range(3):
        for b in range(3):
            term = padded[..., a:a + Gh, b:b + Gw, :] @ weight[a, b]
            out = term if out is None else out + term
    if bias is not None:
        out = out + bias
    return out


def conv_pointwise(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Shared per-point layer (1x1 convolution over the point axis) on [..,N,Cin]."""
    if x.shape[-2] == 0:
        raise DimensionError("conv_pointwise: empty point set")
    return linear(x, weight, bias)


def max_pool_points(x: torch.Tensor) -> torch.Tensor:
    """Columnwise maximum over the point axis: [..,N,C] -> [..,C]."""
    if x.shape[-2] == 0:
        raise DimensionError("max_pool_points: empty point set")
    return x.max(dim=-2).values


def bilinear_upsample_points(feats: torch.Tensor, factor: int) -> torch.Tensor:
    """Linear interpolation along the ordered point axis, ``N`` rows -> ``N*factor`` rows.

    Output row j sits at source position j/factor and blends the rows either
    side of it; positions past the last row clamp to it.
    """
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    n = feats.shape[-2]
    if n == 0:
        raise DimensionError("bilinear_upsample_points: empty point set")
    j = torch.arange(n * factor, device=feats.device)
    lo = torch.div(j, factor, rounding_mode="floor")
    hi = torch.clamp(lo + 1, max=n - 1)
    w = ((j - lo * factor).to(feats.dtype) / factor).unsqueeze(-1)
    f_lo = feats.index_select(-2, lo)
    f_hi = feats.index_select(-2, hi)
    return (1 - w) * f_lo + w * f_hi
