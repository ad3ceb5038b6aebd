"""End-to-end EWT assembly, configuration and analytic cost accounting."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .blocks import ACTIVATIONS, MFAM
from .errors import ConfigError, DimensionError
from .layers import Conv2d, Module
from .tensor import Tensor
from .wavelet import dwt_multi, iwt_multi


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    embed_dim: int = 180
    window_size: int = 8
    heads: int = 6
    num_dfeb: int = 4
    blocks_per_dfeb: int = 6
    res_scale: float = 0.1
    wavelet_level: int = 1
    mlp_ratio: int = 2
    activation: str = "gelu"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.in_channels not in (1, 3):
            problems.append(f"in_channels must be 1 or 3 (got {self.in_channels})")
        if self.embed_dim < 1:
            problems.append(f"embed_dim must be positive (got {self.embed_dim})")
        if self.heads < 1 or self.embed_dim % self.heads:
            problems.append(f"embed_dim {self.embed_dim} must be divisible by heads {self.heads}")
        if self.window_size < 1:
            problems.append(f"window_size must be positive (got {self.window_size})")
        if self.num_dfeb < 1:
            problems.append(f"num_dfeb must be >= 1 (got {self.num_dfeb})")
        if self.blocks_per_dfeb < 1:
            problems.append(f"blocks_per_dfeb must be >= 1 (got {self.blocks_per_dfeb})")
        if not 0.0 <= self.res_scale <= 1.0:
            problems.append(f"res_scale must lie in [0, 1] (got {self.res_scale})")
        if self.wavelet_level < 0:
            problems.append(f"wavelet_level must be >= 0 (got {self.wavelet_level})")
        if self.mlp_ratio != 2:
            problems.append(f"mlp_ratio is fixed at 2 (got {self.mlp_ratio})")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {sorted(ACTIVATIONS)} (got {self.activation!r})")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def multiple(self) -> int:
        """Input height and width must be multiples of this."""
        return self.window_size * 2**self.wavelet_level

    @property
    def wavelet_channels(self) -> int:
        return self.in_channels * 4**self.wavelet_level

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        names = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(values) - set(names)
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        kwargs = {}
        for key, raw in values.items():
            default = getattr(cls, key)
            try:
                kwargs[key] = type(default)(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"model.{key}: cannot parse {raw!r} as {type(default).__name__}") from None
        return cls(**kwargs)


def check_input_shape(config: ModelConfig, shape: Sequence[int]) -> None:
    if len(shape) != 4 or shape[1] != config.in_channels:
        raise DimensionError(f"expected N,{config.in_channels},H,W input, got {tuple(shape)}")
    h, w = shape[2], shape[3]
    m = config.multiple
    if h % m or w % m:
        raise DimensionError(f"input size {h}x{w} must be a multiple of {m} (window {config.window_size} x 2^{config.wavelet_level})")


class Model(Module):
    def __init__(self, config: ModelConfig, seed: int = 0, branches: Sequence[str] = ("conv", "trans")):
        rng = np.random.default_rng(seed)
        c = config
        self.config = c
        self.seed = seed
        self.branches = tuple(branches)
        self.head = Conv2d(c.wavelet_channels, c.embed_dim, 3, rng)
        self.body = MFAM(
            c.embed_dim, c.heads, c.window_size, c.num_dfeb, c.blocks_per_dfeb,
            c.res_scale, c.mlp_ratio, c.activation, rng, branches,
        )
        self.tail = Conv2d(c.embed_dim, c.wavelet_channels, 3, rng)

    def forward(self, noisy: Tensor) -> Tensor:
        check_input_shape(self.config, noisy.shape)
        level = self.config.wavelet_level
        fe = dwt_multi(noisy, level) if level else noisy
        fr = T.add(fe, self.tail(self.body(self.head(fe))))
        return iwt_multi(fr, level) if level else fr

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}


def build(config: ModelConfig, seed: int = 0, branches: Sequence[str] = ("conv", "trans")) -> Model:
    """Deterministically initialised model; ``branches`` is for ablations only."""
    config.validate()
    return Model(config, seed, branches)


def forward(m: Model, noisy: Tensor) -> Tensor:
    return m.forward(noisy)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    return T.l1_mean(pred, target)


def param_count(m: Model) -> int:
    return m.param_count()


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------


def _body_size(config: ModelConfig, H: int, W: int) -> tuple[int, int]:
    check_input_shape(config, (1, config.in_channels, H, W))
    s = 2**config.wavelet_level
    return H // s, W // s


def flops_estimate(config: ModelConfig, H: int, W: int) -> int:
    """Multiply-accumulates of one forward pass on a single H x W image.

    conv: 9*Cin*Cout*pixels; linear: tokens*Din*Dout; attention scores and
    weighted values: 2*pixels*ws^2*D per block.  Elementwise work, norms,
    softmax and the wavelet transforms are not counted.
    """
    h, w = _body_size(config, H, W)
    p = h * w
    d, ws, c0 = config.embed_dim, config.window_size, config.wavelet_channels
    hidden = config.mlp_ratio * d
    conv_block = 2 * 9 * d * d * p
    transformer = p * d * 3 * d + p * d * d + p * d * hidden + p * hidden * d + 2 * p * ws * ws * d
    fuse = 9 * 2 * d * d * p
    dfeb = conv_block + config.blocks_per_dfeb * transformer + fuse
    head = tail = 9 * c0 * d * p
    return head + config.num_dfeb * dfeb + conv_block + tail


def forward_schedule(config: ModelConfig, H: int, W: int) -> list[tuple[str, int, tuple[str, ...]]]:
    """Straightforward inference schedule as (buffer, elements, inputs) triples.

    Every listed op writes a fresh buffer; reshapes are views and do not
    appear.  Batch size is one.
    """
    h, w = _body_size(config, H, W)
    p = h * w
    d, ws, heads = config.embed_dim, config.window_size, config.heads
    x_sz = d * p
    img = config.in_channels * H * W
    scores = heads * p * ws * ws
    hidden = config.mlp_ratio * x_sz
    ops: list[tuple[str, int, tuple[str, ...]]] = [("input", img, ())]
    prev = "input"
    for k in range(config.wavelet_level):
        ops.append((f"dwt{k}", img, (prev,)))
        prev = f"dwt{k}"
    fe = prev
    ops.append(("head", x_sz, (fe,)))

    def conv_block(tag: str, src: str) -> str:
        ops.append((f"{tag}.conv1", x_sz, (src,)))
        ops.append((f"{tag}.relu", x_sz, (f"{tag}.conv1",)))
        ops.append((f"{tag}.conv2", x_sz, (f"{tag}.relu",)))
        ops.append((f"{tag}.out", x_sz, (src, f"{tag}.conv2")))
        return f"{tag}.out"

    def transformer(tag: str, src: str) -> str:
        seq = [
            ("tokens", x_sz, (src,)),
            ("ln1", x_sz, ("tokens",)),
            ("windows", x_sz, ("ln1",)),
            ("qkv", 3 * x_sz, ("windows",)),
            ("scores", scores, ("qkv",)),
            ("attn", scores, ("scores",)),
            ("av", x_sz, ("attn", "qkv")),
            ("proj", x_sz, ("av",)),
            ("merged", x_sz, ("proj",)),
            ("res1", x_sz, ("tokens", "merged")),
            ("ln2", x_sz, ("res1",)),
            ("fc1", hidden, ("ln2",)),
            ("act", hidden, ("fc1",)),
            ("fc2", x_sz, ("act",)),
            ("res2", x_sz, ("res1", "fc2")),
            ("out", x_sz, ("res2",)),
        ]
        local = {name: f"{tag}.{name}" for name, _, _ in seq}
        for name, size, inputs in seq:
            ops.append((local[name], size, tuple(src if i == src else local[i] for i in inputs)))
        return local["out"]

    src = "head"
    feats = []
    for i in range(config.num_dfeb):
        tag = f"dfeb{i}"
        c = conv_block(f"{tag}.conv", src)
        t = src
        for j in range(config.blocks_per_dfeb):
            t = transformer(f"{tag}.trans{j}", t)
        ops.append((f"{tag}.cat", 2 * x_sz, (c, t)))
        ops.append((f"{tag}.fuse", x_sz, (f"{tag}.cat",)))
        src = f"{tag}.fuse"
        feats.append(src)
    dense = feats[0]
    for i, f in enumerate(feats[1:], start=1):
        ops.append((f"dense{i}", x_sz, (dense, f)))
        dense = f"dense{i}"
    tail_block = conv_block("mfam_tail", dense)
    ops.append(("mfam_out", x_sz, ("head", tail_block)))
    ops.append(("tail", img, ("mfam_out",)))
    ops.append(("residual", img, (fe, "tail")))
    prev = "residual"
    for k in range(config.wavelet_level):
        ops.append((f"iwt{k}", img, (prev,)))
        prev = f"iwt{k}"
    return ops


def peak_live(ops: Sequence[tuple[str, int, tuple[str, ...]]]) -> int:
    """Largest total size of buffers alive at any op (inputs + output)."""
    last_use = {name: k for k, (name, _, _) in enumerate(ops)}
    for k, (_, _, inputs) in enumerate(ops):
        for name in inputs:
            last_use[name] = k
    final = ops[-1][0]
    sizes = {}
    live: set[str] = set()
    current = peak = 0
    for k, (name, size, inputs) in enumerate(ops):
        sizes[name] = size
        live.add(name)
        current += size
        peak = max(peak, current)
        for buf in list(live):
            if last_use[buf] <= k and buf != final:
                live.discard(buf)
                current -= sizes[buf]
    return peak


def activation_footprint(config: ModelConfig, H: int, W: int) -> int:
    """Peak simultaneously-live activation elements for one image."""
    return peak_live(forward_schedule(config, H, W))
