"""Momentum-SGD training loop with step learning-rate decay."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import CurriculumLoader, read_manifest
from .head import detection_loss
from .model import FRBDetector

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


def learning_rate(iteration, base=0.01, decay_steps=15000, factor=10.0):
    """``base * factor ** -floor(iteration / decay_steps)``."""
    return base / factor ** (iteration // decay_steps)


class MomentumSGD(torch.optim.Optimizer):
    """``v <- mu v - lr grad``; ``theta <- theta + v``.

    The learning rate is looked up per step from ``schedule(iteration)``.
    """

    def __init__(self, params, schedule, momentum=0.9):
        super().__init__(params, {"momentum": momentum})
        self.schedule = schedule
        self.iteration = 0

    @torch.no_grad()
    def step(self, closure=None):
        lr = self.schedule(self.iteration)
        for group in self.param_groups:
            mu = group["momentum"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                v = state.get("velocity")
                if v is None:
                    v = state["velocity"] = torch.zeros_like(p)
                v.mul_(mu).sub_(p.grad, alpha=lr)
                p.add_(v)
        self.iteration += 1
        return lr


def make_optimizer(model, cfg: RunConfig):
    return MomentumSGD(model.parameters(),
                       lambda t: learning_rate(t, cfg.lr, cfg.decay_steps, cfg.decay_factor),
                       cfg.momentum)


@dataclass
class TrainResult:
    model: FRBDetector
    optimizer: MomentumSGD
    losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def to_tensors(batch, dtype=torch.float32):
    images = torch.as_tensor(batch["images"], dtype=dtype)
    targets = {k: torch.as_tensor(v, dtype=dtype) for k, v in batch["targets"].items()}
    return images, targets


def _dump_batch(path, batch, iteration, parts):
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, images=batch["images"], indices=np.array(batch["indices"]), iteration=iteration,
             **{f"target_{k}": v for k, v in batch["targets"].items()},
             **{f"loss_{k}": v.item() for k, v in parts.items()})


def train(cfg: RunConfig, records=None, checkpoint_dir=None) -> TrainResult:
    """Train from scratch on ``records`` (or the config's manifest).

    Raises :class:`NumericalError` on a non-finite loss after writing the
    offending batch to ``<out_dir>/nan_batch.npz``.
    """
    torch.manual_seed(cfg.seed)
    if records is None:
        records = read_manifest(cfg.manifest, (cfg.image_size, cfg.image_size))
    model = FRBDetector(cfg.model)
    model.train()
    optimizer = make_optimizer(model, cfg)
    loader = CurriculumLoader(records, cfg.curriculum_schedule(), cfg.batch_size,
                              (cfg.image_size, cfg.image_size), model.output_stride,
                              cfg.shrink_ratio, cfg.seed, cfg.curriculum)
    out_dir = Path(checkpoint_dir or cfg.out_dir)
    result = TrainResult(model, optimizer)
    for t, batch in enumerate(loader.batches(0, cfg.iterations), start=0):
        images, targets = to_tensors(batch)
        outputs = model(images)
        loss, parts = detection_loss(outputs, targets, cfg.loss_weights)
        if not math.isfinite(loss.item()):
            dump = out_dir / "nan_batch.npz"
            _dump_batch(dump, batch, t, parts)
            raise NumericalError(f"non-finite loss at iteration {t} "
                                 f"({', '.join(f'{k}={v.item():.4g}' for k, v in parts.items())}); "
                                 f"batch written to {dump}")
        optimizer.zero_grad()
        loss.backward()
        lr = optimizer.step()
        result.losses.append(loss.item())
        if cfg.log_every and t % cfg.log_every == 0:
            log.info("iter %d lr %.2e loss %.4f (score %.4f rbox %.4f quad %.4f)", t, lr, loss.item(),
                     *(v.item() for v in parts.values()))
        if cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0:
            result.checkpoints.append(save_checkpoint(out_dir / f"ckpt_{t + 1:06d}.frbdet", model,
                                                      cfg.to_dict(), t + 1, optimizer))
    result.checkpoints.append(save_checkpoint(out_dir / "final.frbdet", model, cfg.to_dict(),
                                              cfg.iterations, optimizer))
    return result
