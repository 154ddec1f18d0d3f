"""Central-difference gradient checking against autograd.

Run in float64.  The relative error of an entry is
``|analytic - numeric| / max(1, |numeric|)``.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence, Union

import numpy as np
import torch

FD_STEP = 1e-5

Inputs = Union[Mapping[str, torch.Tensor], Sequence[torch.Tensor]]


class GradCheckError(RuntimeError):
    pass


def _as_named(inputs: Inputs) -> dict[str, torch.Tensor]:
    if isinstance(inputs, Mapping):
        return dict(inputs)
    return {str(i): t for i, t in enumerate(inputs)}


def analytic_gradients(fn: Callable[[], torch.Tensor], inputs: Inputs, name: str = "op") -> dict[str, torch.Tensor]:
    named = _as_named(inputs)
    tensors = list(named.values())
    for t in tensors:
        t.requires_grad_(True)
    out = fn()
    if out.numel() != 1:
        raise GradCheckError(f"{name}: function must return a scalar, got shape {tuple(out.shape)}")
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    result = {}
    for (key, t), g in zip(named.items(), grads):
        g = torch.zeros_like(t) if g is None else g.detach()
        if not bool(torch.isfinite(g).all()):
            raise GradCheckError(f"{name}: non-finite gradient for input {key!r}")
        result[key] = g
    return result


def grad_check(
    fn: Callable[[], torch.Tensor],
    inputs: Inputs,
    *,
    step: float = FD_STEP,
    max_entries: int = 24,
    seed: int = 0,
    name: str = "op",
    corrupt: bool = False,
) -> float:
    """Max relative error between autograd and central differences.

    ``fn`` closes over ``inputs`` and returns a scalar.  At most
    ``max_entries`` randomly chosen entries of each input are probed.
    ``corrupt`` perturbs the analytic gradient (harness self-test).
    """
    named = _as_named(inputs)
    for key, t in named.items():
        if t.dtype != torch.float64:
            raise GradCheckError(f"{name}: input {key!r} is {t.dtype}; grad checks run in float64")
    analytic = analytic_gradients(fn, named, name)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for key, t in named.items():
            flat = t.view(-1)
            g = analytic[key].reshape(-1)
            n = flat.numel()
            picks = rng.choice(n, size=min(n, max_entries), replace=False)
            for idx in picks:
                idx = int(idx)
                orig = flat[idx].item()
                flat[idx] = orig + step
                f_plus = float(fn())
                flat[idx] = orig - step
                f_minus = float(fn())
                flat[idx] = orig
                numeric = (f_plus - f_minus) / (2 * step)
                a = g[idx].item() + (1.0 if corrupt else 0.0)
                if not np.isfinite(numeric):
                    raise GradCheckError(f"{name}: non-finite numeric gradient for input {key!r}")
                worst = max(worst, abs(a - numeric) / max(1.0, abs(numeric)))
    return worst


def projection_loss(out: torch.Tensor, seed: int = 0) -> torch.Tensor:
    """Reduce a tensor output to a scalar with fixed random weights."""
    gen = torch.Generator().manual_seed(seed)
    w = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    return (out * w).sum()
