"""ConvBlock, Transformer block, dual-stream block (DFEB) and the aggregation module (MFAM)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import WindowAttention, wmsa
from .errors import ConfigError, DimensionError
from .layers import Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor

ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu}


def _check_channels(x: Tensor, dim: int, what: str) -> None:
    if x.ndim != 4 or x.shape[1] != dim:
        raise DimensionError(f"{what} expects N,{dim},H,W input, got {x.shape}")


class ConvBlock(Module):
    """``y = x + lam * conv2(relu(conv1(x)))``."""

    def __init__(self, dim: int, lam: float = 0.1, rng: np.random.Generator | None = None):
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"residual scale must lie in [0, 1], got {lam}")
        self.conv1 = Conv2d(dim, dim, 3, rng)
        self.conv2 = Conv2d(dim, dim, 3, rng)
        self.lam = lam
        self.dim = dim

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.dim, "ConvBlock")
        return T.add(x, T.scale(self.conv2(T.relu(self.conv1(x))), self.lam))


class MLP(Module):
    def __init__(self, dim: int, hidden: int, activation: str = "gelu", rng=None):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ACTIVATIONS[self.activation](self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: ``x += WMSA(LN(x)); x += MLP(LN(x))`` on N,D,H,W maps."""

    def __init__(
        self,
        dim: int,
        heads: int,
        ws: int,
        shift: int = 0,
        mlp_ratio: int = 2,
        activation: str = "gelu",
        rng: np.random.Generator | None = None,
    ):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown MLP activation {activation!r}")
        self.ln1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, ws, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, activation, rng)
        self.shift = shift
        self.ws = ws
        self.dim = dim

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.dim, "TransformerBlock")
        tokens = T.permute(x, (0, 2, 3, 1))
        tokens = T.add(tokens, wmsa(self.ln1(tokens), self.attn, self.ws, self.shift))
        tokens = T.add(tokens, self.mlp(self.ln2(tokens)))
        return T.permute(tokens, (0, 3, 1, 2))


def _transformer_chain(dim, heads, ws, depth, mlp_ratio, activation, rng) -> list[TransformerBlock]:
    """Blocks with shifts alternating 0, ws/2, 0, ..."""
    return [
        TransformerBlock(dim, heads, ws, 0 if j % 2 == 0 else ws // 2, mlp_ratio, activation, rng)
        for j in range(depth)
    ]


class DFEB(Module):
    """Two full-width branches on the same input, concatenated and fused.

    ``branches`` defaults to the conv/transformer pairing; the conv/conv and
    trans/trans variants exist for the branch-strategy ablation only.  A
    repeated branch kind gets a ``_b`` suffix in its parameter names.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        ws: int,
        depth: int = 6,
        lam: float = 0.1,
        mlp_ratio: int = 2,
        activation: str = "gelu",
        rng: np.random.Generator | None = None,
        branches: Sequence[str] = ("conv", "trans"),
    ):
        if len(branches) != 2 or any(b not in ("conv", "trans") for b in branches):
            raise ConfigError(f"DFEB branches must be two of 'conv'/'trans', got {branches}")
        self._names = []
        for kind in branches:
            name = kind if kind not in self._names else kind + "_b"
            if kind == "conv":
                setattr(self, name, ConvBlock(dim, lam, rng))
            else:
                setattr(self, name, _transformer_chain(dim, heads, ws, depth, mlp_ratio, activation, rng))
            self._names.append(name)
        self.fuse = Conv2d(2 * dim, dim, 3, rng)
        self.dim = dim

    def _run_branch(self, name: str, x: Tensor) -> Tensor:
        branch = getattr(self, name)
        if isinstance(branch, list):
            for block in branch:
                x = block(x)
            return x
        return branch(x)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.dim, "DFEB")
        outs = [self._run_branch(name, x) for name in self._names]
        return self.fuse(T.concat(outs, axis=1))


class MFAM(Module):
    """Chain of DFEBs whose outputs are summed, refined by a ConvBlock, added to the input."""

    def __init__(
        self,
        dim: int,
        heads: int,
        ws: int,
        num_dfeb: int = 4,
        depth: int = 6,
        lam: float = 0.1,
        mlp_ratio: int = 2,
        activation: str = "gelu",
        rng: np.random.Generator | None = None,
        branches: Sequence[str] = ("conv", "trans"),
    ):
        if num_dfeb < 1:
            raise ConfigError("MFAM needs at least one DFEB")
        self.dfeb = [DFEB(dim, heads, ws, depth, lam, mlp_ratio, activation, rng, branches) for _ in range(num_dfeb)]
        self.tail = ConvBlock(dim, lam, rng)
        self.dim = dim

    def features(self, x: Tensor) -> list[Tensor]:
        outs = []
        for block in self.dfeb:
            x = block(x)
            outs.append(x)
        return outs

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.dim, "MFAM")
        feats = self.features(x)
        dense = feats[0]
        for f in feats[1:]:
            dense = T.add(dense, f)
        return T.add(x, self.tail(dense))
