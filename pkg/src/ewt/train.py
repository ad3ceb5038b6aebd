"""Training loop: sample patches, augment, add noise, L1, backprop, Adam."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Image, NoiseSpec, augment_array, make_rng, patch_corners
from .errors import ConfigError
from .model import Model, l1_loss
from .optim import AdamState, adam_step, halving_lr
from .tensor import Tensor, backward

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "loss", "lr", "seconds")


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 16
    patch_size: int = 64
    lr: float = 2e-4
    lr_halving: float = 0.25
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0

    def validate(self, model_multiple: int | None = None) -> None:
        if self.steps < 1:
            raise ConfigError(f"train.steps must be >= 1 (got {self.steps})")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1 (got {self.batch_size})")
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive (got {self.lr})")
        if model_multiple and self.patch_size % model_multiple:
            raise ConfigError(f"train.patch_size {self.patch_size} must be a multiple of {model_multiple}")


def sample_batch(
    images: Sequence[Image], cfg: TrainConfig, noise: NoiseSpec, step: int, dtype=np.float32
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (noisy, clean) batch for ``step``."""
    rng = make_rng(cfg.seed, 1, step)
    clean, noisy = [], []
    for b in range(cfg.batch_size):
        img = images[int(rng.integers(len(images)))]
        _, h, w = img.shape
        (top, left), = patch_corners(h, w, cfg.patch_size, 1, cfg.seed, 2, step, b)
        patch = augment_array(img.pixels[:, top : top + cfg.patch_size, left : left + cfg.patch_size], int(rng.integers(8)))
        clean.append(patch)
        noisy.append(noise.apply(Image(patch), 3, step, b).pixels)
    return np.stack(noisy).astype(dtype), np.stack(clean).astype(dtype)


def train(
    model: Model,
    images: Sequence[Image],
    cfg: TrainConfig,
    noise: NoiseSpec,
    metrics_path: str | Path | None = None,
    checkpoint: Callable[[Model, int], None] | None = None,
) -> list[float]:
    """Run ``cfg.steps`` optimisation steps; returns the per-step loss."""
    cfg.validate(model.config.multiple)
    if not images:
        raise ConfigError("training needs at least one image")
    params = model.parameters()
    state = AdamState.for_params(params)
    dtype = params[0].dtype
    losses: list[float] = []
    writer = None
    handle = None
    if metrics_path is not None:
        handle = open(metrics_path, "w", newline="")
        writer = csv.writer(handle)
        writer.writerow(METRICS_HEADER)
    start = time.perf_counter()
    try:
        for step in range(cfg.steps):
            noisy, clean = sample_batch(images, cfg, noise, step, dtype)
            lr = halving_lr(step, cfg.steps, cfg.lr, cfg.lr_halving)
            for p in params:
                p.grad = None
            loss = l1_loss(model(Tensor(noisy, dtype=dtype)), Tensor(clean, dtype=dtype))
            backward(loss)
            adam_step(params, [p.grad for p in params], state, lr)
            value = float(loss.data)
            losses.append(value)
            if writer is not None and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                writer.writerow((step, repr(value), repr(lr), f"{time.perf_counter() - start:.3f}"))
                handle.flush()
            if step % 50 == 0:
                log.info("step %d loss %.5f lr %.2e", step, value, lr)
            if checkpoint is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                checkpoint(model, step + 1)
    finally:
        if handle is not None:
            handle.close()
    return losses
