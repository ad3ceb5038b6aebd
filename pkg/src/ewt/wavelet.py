"""Orthonormal 2-D Haar transform used as the model's down/up-sampling layers.

For every non-overlapping 2x2 block ``[[a, b], [c, d]]``::

    ll = ( a + b + c + d) / 2        a = (ll - lh - hl + hh) / 2
    lh = (-a - b + c + d) / 2        b = (ll - lh + hl - hh) / 2
    hl = (-a + b - c + d) / 2        c = (ll + lh - hl - hh) / 2
    hh = ( a - b - c + d) / 2        d = (ll + lh + hl + hh) / 2

The analysis matrix is orthogonal, so the inverse is also the adjoint and each
direction serves as the other's pullback.  Stacked layouts put the four
sub-bands of source channel ``c`` at channels ``4c .. 4c+3`` in the order
ll, lh, hl, hh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, concat, reshape, split


@dataclass
class WaveletSubbands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    level: int = 1

    def __post_init__(self):
        shapes = {self.ll.shape, self.lh.shape, self.hl.shape, self.hh.shape}
        if len(shapes) != 1:
            raise DimensionError(f"sub-bands disagree in shape: {sorted(shapes)}")

    @property
    def bands(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.ll, self.lh, self.hl, self.hh


def _analysis(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2)
    a = blocks[:, :, :, 0, :, 0]
    b = blocks[:, :, :, 0, :, 1]
    cc = blocks[:, :, :, 1, :, 0]
    d = blocks[:, :, :, 1, :, 1]
    half = x.dtype.type(0.5)
    out = np.stack(
        [
            (a + b + cc + d) * half,
            (-a - b + cc + d) * half,
            (-a + b - cc + d) * half,
            (a - b - cc + d) * half,
        ],
        axis=2,
    )
    return out.reshape(n, 4 * c, h // 2, w // 2)


def _synthesis(y: np.ndarray) -> np.ndarray:
    n, c4, h, w = y.shape
    bands = y.reshape(n, c4 // 4, 4, h, w)
    ll, lh, hl, hh = bands[:, :, 0], bands[:, :, 1], bands[:, :, 2], bands[:, :, 3]
    half = y.dtype.type(0.5)
    out = np.empty((n, c4 // 4, h, 2, w, 2), dtype=y.dtype)
    out[:, :, :, 0, :, 0] = (ll - lh - hl + hh) * half
    out[:, :, :, 0, :, 1] = (ll - lh + hl - hh) * half
    out[:, :, :, 1, :, 0] = (ll + lh - hl - hh) * half
    out[:, :, :, 1, :, 1] = (ll + lh + hl + hh) * half
    return out.reshape(n, c4 // 4, 2 * h, 2 * w)


def _check_even(x: Tensor, multiple: int = 2) -> None:
    if x.ndim != 4:
        raise DimensionError(f"wavelet transforms expect N,C,H,W input, got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if h % multiple or w % multiple:
        raise DimensionError(f"spatial size {h}x{w} must be divisible by {multiple}")


def dwt_stacked(x: Tensor) -> Tensor:
    """One Haar level, returned channel-stacked as N x 4C x H/2 x W/2."""
    _check_even(x)
    return Tensor._result(_analysis(x.data), (x,), lambda g: (_synthesis(g),), "dwt")


def iwt_stacked(y: Tensor) -> Tensor:
    """Inverse of :func:`dwt_stacked`."""
    if y.ndim != 4 or y.shape[1] % 4:
        raise DimensionError(f"inverse transform needs N,4C,H,W input, got {y.shape}")
    return Tensor._result(_synthesis(y.data), (y,), lambda g: (_analysis(g),), "iwt")


def dwt_haar(x: Tensor) -> WaveletSubbands:
    stacked = dwt_stacked(x)
    n, c4, h, w = stacked.shape
    parts = split(reshape(stacked, (n, c4 // 4, 4, h, w)), 4, axis=2)
    ll, lh, hl, hh = (reshape(p, (n, c4 // 4, h, w)) for p in parts)
    return WaveletSubbands(ll, lh, hl, hh, level=1)


def iwt_haar(s: WaveletSubbands) -> Tensor:
    n, c, h, w = s.ll.shape
    stacked = concat([reshape(b, (n, c, 1, h, w)) for b in s.bands], axis=2)
    return iwt_stacked(reshape(stacked, (n, 4 * c, h, w)))


def _check_level(level: int) -> None:
    if int(level) != level or level < 1:
        raise DimensionError(f"wavelet level must be a positive integer, got {level}")


def dwt_multi(x: Tensor, level: int) -> Tensor:
    """Apply the Haar level ``level`` times to every channel of the previous stage."""
    _check_level(level)
    _check_even(x, 2**level)
    for _ in range(level):
        x = dwt_stacked(x)
    return x


def iwt_multi(x: Tensor, level: int) -> Tensor:
    _check_level(level)
    if x.ndim != 4 or x.shape[1] % (4**level):
        raise DimensionError(f"{level}-level inverse needs a channel count divisible by {4**level}, got {x.shape}")
    for _ in range(level):
        x = iwt_stacked(x)
    return x
