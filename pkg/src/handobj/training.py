"""Training loop, cosine schedule and checkpoint container."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .config import RunConfig
from .io import container_bytes, container_from_bytes
from .metrics import LossWeights, total_loss
from .model import DTYPES, ReconstructionModel, build_model, collate
from .synth import augment

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "handobj-checkpoint"
CHECKPOINT_VERSION = 1
LOG_KEYS = ("pose", "cd_sparse", "cd_dense")


class CheckpointError(ValueError):
    pass


def cosine_lr(step: int, total: int, base_lr: float) -> float:
    """Cosine decay from ``base_lr`` at step 0 to exactly 0 at step ``total - 1``."""
    if total <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / (total - 1)))


def make_optimizer(model: torch.nn.Module, config: RunConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(), lr=config.base_lr, betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps
    )


@dataclass
class TrainState:
    model: ReconstructionModel
    optimizer: torch.optim.Adam
    rng: np.random.Generator
    step: int = 0
    log: list = field(default_factory=list)

    @property
    def config(self) -> RunConfig:
        return self.model.config


def init_state(config: RunConfig) -> TrainState:
    model = build_model(config)
    return TrainState(model, make_optimizer(model, config), np.random.default_rng(config.seed))


# -- checkpoints -----------------------------------------------------------

def checkpoint_bytes(state: TrainState) -> bytes:
    names = [n for n, _ in state.model.named_parameters()]
    tensors = {f"param.{n}": p.detach().cpu().numpy() for n, p in state.model.named_parameters()}
    slots = [state.optimizer.state.get(p, {}) for p in state.model.parameters()]
    if all(slots):
        tensors.update({f"optim.m.{n}": s["exp_avg"].numpy() for n, s in zip(names, slots)})
        tensors.update({f"optim.v.{n}": s["exp_avg_sq"].numpy() for n, s in zip(names, slots)})
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "step": state.step,
        "rng_state": state.rng.bit_generator.state,
    }
    return container_bytes(header, tensors)


def save_checkpoint(state: TrainState, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(state))


def state_from_bytes(buf: bytes, expect: Optional[RunConfig] = None) -> TrainState:
    header, tensors = container_from_bytes(buf)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a checkpoint (format {header.get('format')!r})")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    config = RunConfig.from_dict(header["config"])
    if expect is not None and expect.model_dict() != config.model_dict():
        diff = sorted(k for k, v in expect.model_dict().items() if config.model_dict()[k] != v)
        raise CheckpointError(f"checkpoint/config mismatch in {diff}")
    model = ReconstructionModel(config).to(DTYPES[config.precision])
    params = dict(model.named_parameters())
    expected = {f"param.{n}" for n in params}
    present = {k for k in tensors if k.startswith("param.")}
    if present != expected:
        raise CheckpointError(
            f"parameter set mismatch: missing {sorted(expected - present)[:5]}, unexpected {sorted(present - expected)[:5]}"
        )
    with torch.no_grad():
        for n, p in params.items():
            src = torch.from_numpy(tensors[f"param.{n}"])
            if src.shape != p.shape:
                raise CheckpointError(f"parameter {n}: shape {tuple(src.shape)} != {tuple(p.shape)}")
            p.copy_(src)
    opt = make_optimizer(model, config)
    step = int(header["step"])
    if f"optim.m.{next(iter(params))}" in tensors:
        for n, p in params.items():
            opt.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": torch.from_numpy(tensors[f"optim.m.{n}"]),
                "exp_avg_sq": torch.from_numpy(tensors[f"optim.v.{n}"]),
            }
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    return TrainState(model, opt, rng, step)


def load_checkpoint(path, expect: Optional[RunConfig] = None) -> TrainState:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return state_from_bytes(path.read_bytes(), expect)


# -- loop ------------------------------------------------------------------

def draw_batch(rng: np.random.Generator, samples: Sequence, config: RunConfig) -> list:
    """Seeded mini-batch, augmented when enabled."""
    idx = rng.choice(len(samples), size=min(config.batch_size, len(samples)), replace=False)
    idx = np.sort(idx)
    if not config.augment:
        return [samples[i] for i in idx]
    seeds = rng.integers(0, 2**63 - 1, size=len(idx))
    return [augment(samples[i], int(s), config.render_points) for i, s in zip(idx, seeds)]


def train_step(state: TrainState, samples: Sequence, weights: LossWeights) -> dict:
    config = state.config
    lr = cosine_lr(state.step, config.steps, config.base_lr)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    batch = collate(draw_batch(state.rng, samples, config), config)
    state.model.train()
    loss, parts = total_loss(state.model(batch), batch.target, weights)
    values = {k: float(v.detach()) for k, v in parts.items()}
    if not math.isfinite(float(loss.detach())):
        comps = ", ".join(f"{k}={v}" for k, v in values.items())
        raise FloatingPointError(f"non-finite loss at step {state.step}: {comps}")
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    record = {"step": state.step, "lr": lr, "loss": float(loss.detach()), **values}
    state.step += 1
    state.log.append(record)
    return record


def train(
    config: RunConfig,
    samples: Sequence,
    out_dir=None,
    state: Optional[TrainState] = None,
    callback: Optional[Callable[[dict], None]] = None,
) -> TrainState:
    """Run until ``config.steps``; writes ``loss_log.jsonl`` and ``model.ckpt`` under ``out_dir``."""
    if not samples:
        raise ValueError("training set is empty")
    state = state or init_state(config)
    weights = LossWeights(config.lambda_pose, config.lambda_sparse)
    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
        log_file = open(out / "loss_log.jsonl", "a" if state.step else "w")
    try:
        while state.step < config.steps:
            rec = train_step(state, samples, weights)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
            if callback:
                callback(rec)
            if config.log_every and rec["step"] % config.log_every == 0:
                log.info("step %d lr %.3g loss %.4f dense CD %.4f", rec["step"], rec["lr"], rec["loss"], rec["cd_dense"])
            if out is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_checkpoint(state, out / f"step_{state.step:06d}.ckpt")
    finally:
        if log_file:
            log_file.close()
    if out is not None:
        save_checkpoint(state, out / "model.ckpt")
    return state
