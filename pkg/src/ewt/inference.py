"""Whole-image and tiled denoising, and dataset evaluation."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import Image, NoiseSpec, psnr
from .errors import DimensionError
from .model import Model, check_input_shape
from .tensor import Tensor, no_grad


def _run(model: Model, pixels: np.ndarray) -> np.ndarray:
    dtype = model.parameters()[0].dtype
    with no_grad():
        return model(Tensor(pixels[None], dtype=dtype)).data[0].astype(np.float64)


def denoise(model: Model, img: Image, tile: int | None = None) -> Image:
    """Denoise ``img``; without ``tile`` its size must fit the model multiple.

    Tiles are non-overlapping ``tile`` x ``tile`` crops, each reflection-padded
    at the bottom/right up to the model multiple and cropped back afterwards.
    """
    c, h, w = img.shape
    m = model.config.multiple
    if tile is None:
        check_input_shape(model.config, (1, c, h, w))
        return Image(_run(model, img.pixels))
    if tile < 1:
        raise DimensionError(f"tile size must be positive, got {tile}")
    out = np.empty_like(img.pixels, dtype=np.float64)
    for top in range(0, h, tile):
        for left in range(0, w, tile):
            crop = img.pixels[:, top : top + tile, left : left + tile]
            th, tw = crop.shape[1:]
            ph, pw = -th % m, -tw % m
            padded = np.pad(crop, ((0, 0), (0, ph), (0, pw)), mode="reflect") if (ph or pw) else crop
            out[:, top : top + th, left : left + tw] = _run(model, padded)[:, :th, :tw]
    return Image(out)


def evaluate(
    model: Model,
    dataset: Sequence[tuple[str, Image, Image | None]],
    noise: NoiseSpec,
    tile: int | None = None,
) -> list[tuple[str, float, float]]:
    """``(file, psnr_noisy, psnr_denoised)`` per image; missing noisy images are synthesised."""
    rows = []
    for i, (name, clean, noisy) in enumerate(dataset):
        if noisy is None:
            noisy = noise.apply(clean, i)
        restored = denoise(model, noisy, tile).clamped()
        rows.append((name, psnr(noisy.clamped(), clean), psnr(restored, clean)))
    return rows
