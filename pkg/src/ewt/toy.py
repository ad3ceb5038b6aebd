"""Desk-scale denoising task shared by the toy-learning and ablation checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import NoiseSpec, psnr, synthetic_images
from .inference import denoise
from .model import ModelConfig, build
from .tensor import default_dtype
from .train import TrainConfig, train

TOY_MODEL = ModelConfig(in_channels=1, embed_dim=16, heads=2, window_size=4, num_dfeb=1, blocks_per_dfeb=2)


@dataclass
class ToyResult:
    branches: tuple[str, str]
    seed: int
    losses: list[float] = field(repr=False)
    psnr_noisy: float
    psnr_denoised: float

    @property
    def gain(self) -> float:
        return self.psnr_denoised - self.psnr_noisy


def run_toy(
    seed: int = 0,
    branches: Sequence[str] = ("conv", "trans"),
    config: ModelConfig = TOY_MODEL,
    train_images: int = 20,
    test_images: int = 4,
    size: int = 64,
    sigma: float = 25.0,
    train_cfg: TrainConfig | None = None,
    dtype="float32",
) -> ToyResult:
    """Train on synthetic grayscale images and score held-out PSNR."""
    train_cfg = train_cfg or TrainConfig(steps=500, batch_size=4, patch_size=size, lr=1e-3, seed=seed)
    train_set = synthetic_images(train_images, size, config.in_channels, seed=1000 + seed)
    test_set = synthetic_images(test_images, size, config.in_channels, seed=2000 + seed)
    noise = NoiseSpec("gaussian", sigma=sigma, seed=seed)
    held_out_noise = NoiseSpec("gaussian", sigma=sigma, seed=10_000 + seed)
    with default_dtype(dtype):
        model = build(config, seed, branches)
        losses = train(model, train_set, train_cfg, noise)
    noisy_scores, clean_scores = [], []
    for i, img in enumerate(test_set):
        noisy = held_out_noise.apply(img, i)
        noisy_scores.append(psnr(noisy, img))
        clean_scores.append(psnr(denoise(model, noisy), img))
    return ToyResult(tuple(branches), seed, losses, float(np.mean(noisy_scores)), float(np.mean(clean_scores)))
