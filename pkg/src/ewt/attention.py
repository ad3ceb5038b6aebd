"""Shifted-window multi-head self-attention with relative position bias."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .layers import Linear, Module
from .tensor import Tensor, get_default_dtype

MASK_VALUE = -1e9


@dataclass
class WindowGrid:
    windows: Tensor  # (N * nW, ws*ws, D)
    src_shape: tuple[int, int, int, int]  # (N, H, W, D)
    ws: int

    @property
    def num_windows(self) -> int:
        _, h, w, _ = self.src_shape
        return (h // self.ws) * (w // self.ws)


@dataclass
class AttnMask:
    mask: Tensor  # (nW, ws*ws, ws*ws), entries 0 or MASK_VALUE
    H: int
    W: int
    ws: int
    shift: int


def _check_tiles(h: int, w: int, ws: int) -> None:
    if ws < 1 or h % ws or w % ws:
        raise DimensionError(f"feature map {h}x{w} is not divisible by window size {ws}")


def window_partition(x: Tensor, ws: int) -> WindowGrid:
    """Cut ``x`` (N,H,W,D) into row-major ws x ws token sequences."""
    if x.ndim != 4:
        raise DimensionError(f"window_partition expects N,H,W,D input, got {x.shape}")
    n, h, w, d = x.shape
    _check_tiles(h, w, ws)
    t = T.reshape(x, (n, h // ws, ws, w // ws, ws, d))
    t = T.permute(t, (0, 1, 3, 2, 4, 5))
    return WindowGrid(T.reshape(t, (n * (h // ws) * (w // ws), ws * ws, d)), (n, h, w, d), ws)


def window_reverse(g: WindowGrid) -> Tensor:
    n, h, w, d = g.src_shape
    ws = g.ws
    if g.windows.shape != (n * (h // ws) * (w // ws), ws * ws, d):
        raise DimensionError(f"window tensor {g.windows.shape} does not match source {g.src_shape}")
    t = T.reshape(g.windows, (n, h // ws, w // ws, ws, ws, d))
    t = T.permute(t, (0, 1, 3, 2, 4, 5))
    return T.reshape(t, (n, h, w, d))


def cyclic_shift(x: Tensor, s: int) -> Tensor:
    """Toroidal roll by (-s, -s) over the H and W axes of an N,H,W,D tensor."""
    if s == 0:
        return x
    return T.roll(x, (-s, -s), (1, 2))


@lru_cache(maxsize=None)
def _region_labels(h: int, w: int, ws: int, shift: int) -> np.ndarray:
    labels = np.zeros((h, w), dtype=np.int64)
    bands = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    count = 0
    for hs in bands:
        for wsl in bands:
            labels[hs, wsl] = count
            count += 1
    return labels


@lru_cache(maxsize=None)
def _mask_array(h: int, w: int, ws: int, shift: int) -> np.ndarray:
    nw = (h // ws) * (w // ws)
    if shift == 0:
        return np.zeros((nw, ws * ws, ws * ws))
    labels = _region_labels(h, w, ws, shift)
    tiles = labels.reshape(h // ws, ws, w // ws, ws).transpose(0, 2, 1, 3).reshape(nw, ws * ws)
    differs = tiles[:, :, None] != tiles[:, None, :]
    return np.where(differs, MASK_VALUE, 0.0)


def build_attn_mask(H: int, W: int, ws: int, shift: int) -> AttnMask:
    """Mask token pairs that came from different regions before the shift."""
    if not 0 <= shift < ws:
        raise ContractError(f"shift must satisfy 0 <= shift < ws, got shift={shift}, ws={ws}")
    _check_tiles(H, W, ws)
    return AttnMask(Tensor(_mask_array(H, W, ws, shift)), H, W, ws, shift)


@lru_cache(maxsize=None)
def relative_position_index(ws: int) -> np.ndarray:
    """(ws*ws, ws*ws) table of indices into a ((2ws-1)^2, heads) bias table."""
    coords = np.stack(np.meshgrid(np.arange(ws), np.arange(ws), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (ws - 1)
    return rel[0] * (2 * ws - 1) + rel[1]


class WindowAttention(Module):
    """Parameters of one (shifted-)window attention layer."""

    def __init__(self, dim: int, heads: int, ws: int, rng: np.random.Generator | None = None):
        if heads < 1 or dim % heads:
            raise ContractError(f"embedding dim {dim} is not divisible by {heads} heads")
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.rel_bias = Tensor(np.zeros(((2 * ws - 1) ** 2, heads)), requires_grad=True, dtype=get_default_dtype())
        self.heads = heads
        self.ws = ws
        self.dim = dim

    def bias(self) -> Tensor:
        t = self.ws * self.ws
        b = T.take(self.rel_bias, relative_position_index(self.ws).reshape(-1), axis=0)
        return T.permute(T.reshape(b, (t, t, self.heads)), (2, 0, 1))

    def attend(self, windows: Tensor, mask: np.ndarray | None, batch: int) -> tuple[Tensor, Tensor]:
        """Attention inside each window.  Returns (output tokens, weights)."""
        b_, t, d = windows.shape
        heads, hd = self.heads, d // self.heads
        qkv = T.reshape(self.qkv(windows), (b_, t, 3, heads, hd))
        qkv = T.permute(qkv, (2, 0, 3, 1, 4))
        q, k, v = (T.reshape(part, (b_, heads, t, hd)) for part in T.split(qkv, 3, axis=0))
        scores = T.matmul(T.scale(q, hd**-0.5), T.transpose_last(k))
        scores = T.add(scores, T.broadcast_to(self.bias(), (b_, heads, t, t)))
        if mask is not None:
            nw = mask.shape[0]
            full = np.broadcast_to(mask[None, :, None], (batch, nw, heads, t, t)).reshape(b_, heads, t, t)
            scores = T.add(scores, Tensor(full, dtype=scores.dtype))
        attn = T.softmax(scores, axis=-1)
        out = T.matmul(attn, v)
        out = T.reshape(T.permute(out, (0, 2, 1, 3)), (b_, t, d))
        return self.proj(out), attn

    def forward(self, x: Tensor, shift: int = 0, mask: AttnMask | None = None) -> Tensor:
        return wmsa(x, self, self.ws, shift, mask)


def wmsa(
    x: Tensor,
    p: WindowAttention,
    ws: int,
    shift: int,
    mask: AttnMask | None = None,
    return_attn: bool = False,
):
    """Shift, partition, attend per window, merge, unshift.  ``x`` is N,H,W,D."""
    if x.ndim != 4:
        raise DimensionError(f"wmsa expects N,H,W,D input, got {x.shape}")
    n, h, w, d = x.shape
    if d != p.dim:
        raise DimensionError(f"wmsa: input dim {d} does not match attention dim {p.dim}")
    if ws != p.ws:
        raise DimensionError(f"wmsa: window size {ws} does not match the bias table for {p.ws}")
    _check_tiles(h, w, ws)
    if mask is None and shift:
        mask = build_attn_mask(h, w, ws, shift)
    mask_arr = None
    if mask is not None:
        nw = (h // ws) * (w // ws)
        if mask.mask.shape != (nw, ws * ws, ws * ws):
            raise DimensionError(f"mask {mask.mask.shape} does not fit {nw} windows of {ws * ws} tokens")
        if mask.shift or shift:
            mask_arr = mask.mask.data
    shifted = cyclic_shift(x, shift)
    grid = window_partition(shifted, ws)
    out, attn = p.attend(grid.windows, mask_arr, n)
    y = cyclic_shift(window_reverse(WindowGrid(out, grid.src_shape, ws)), -shift)
    return (y, attn) if return_attn else y
