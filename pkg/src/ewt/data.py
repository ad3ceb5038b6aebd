"""Images, noise synthesis, patch sampling, augmentation and PSNR.

Randomness always comes from :func:`make_rng`: numpy's PCG64 bit generator
seeded through ``SeedSequence([seed, *keys])``.  Keys split one seed into
independent streams (per image, per step, ...), so a corpus is reproducible
from ``(RNG_ALGORITHM, seed)`` alone.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError, ImageFormatError

RNG_ALGORITHM = "numpy-pcg64-seedsequence"
PSNR_CAP = 100.0


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass
class Image:
    pixels: np.ndarray  # (C, H, W)

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] not in (1, 3):
            raise DimensionError(f"image pixels must be C,H,W with C in (1, 3), got {self.pixels.shape}")

    @property
    def colorspace(self) -> str:
        return "gray" if self.pixels.shape[0] == 1 else "rgb"

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def clamped(self) -> "Image":
        return Image(np.clip(self.pixels, 0.0, 1.0))


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    sigma: float = 25.0  # 0-255 scale, gaussian and speckle
    peak: float = 30.0  # poisson
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson", "speckle"):
            raise ContractError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ContractError(f"sigma must be >= 0, got {self.sigma}")
        if self.peak <= 0:
            raise ContractError(f"peak must be > 0, got {self.peak}")

    def apply(self, img: Image, *keys: int) -> Image:
        """Noise ``img`` with the stream selected by ``(seed, *keys)``."""
        if self.kind == "gaussian":
            return add_awgn(img, self.sigma, self.seed, *keys)
        if self.kind == "poisson":
            return add_poisson(img, self.peak, self.seed, *keys)
        return add_speckle(img, self.sigma, self.seed, *keys)

    def to_dict(self) -> dict:
        return asdict(self)


def add_awgn(img: Image, sigma: float, seed: int, *keys: int) -> Image:
    """Additive white Gaussian noise, sigma on the 0-255 scale.  Not clamped."""
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Image(img.pixels.copy())
    n = make_rng(seed, *keys).standard_normal(img.pixels.shape)
    return Image(img.pixels + (sigma / 255.0) * n)


def add_poisson(img: Image, peak: float, seed: int, *keys: int) -> Image:
    """Shot noise: ``Poisson(pixel * peak) / peak``."""
    if peak <= 0:
        raise ContractError(f"peak must be > 0, got {peak}")
    lam = np.clip(img.pixels, 0.0, None) * peak
    return Image(make_rng(seed, *keys).poisson(lam) / peak)


def add_speckle(img: Image, sigma: float, seed: int, *keys: int) -> Image:
    """Multiplicative noise ``pixel * (1 + sigma/255 * n)``."""
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Image(img.pixels.copy())
    n = make_rng(seed, *keys).standard_normal(img.pixels.shape)
    return Image(img.pixels * (1.0 + (sigma / 255.0) * n))


# ---------------------------------------------------------------------------
# patches and augmentation
# ---------------------------------------------------------------------------


def patch_corners(height: int, width: int, size: int, count: int, seed: int, *keys: int) -> list[tuple[int, int]]:
    if size > min(height, width) or size < 1:
        raise DimensionError(f"patch size {size} does not fit a {height}x{width} image")
    rng = make_rng(seed, *keys)
    tops = rng.integers(0, height - size + 1, size=count)
    lefts = rng.integers(0, width - size + 1, size=count)
    return [(int(t), int(l)) for t, l in zip(tops, lefts)]


def extract_patches(img: Image, size: int, count: int, seed: int, *keys: int) -> list[Image]:
    _, h, w = img.shape
    return [
        Image(img.pixels[:, t : t + size, l : l + size].copy())
        for t, l in patch_corners(h, w, size, count, seed, *keys)
    ]


def augment_array(x: np.ndarray, code: int) -> np.ndarray:
    """Dihedral element ``flip^(code // 4) . rot90^(code % 4)`` on the last two axes."""
    if not 0 <= code < 8:
        raise ContractError(f"augmentation code must be in [0, 8), got {code}")
    y = np.rot90(x, code % 4, axes=(-2, -1))
    if code >= 4:
        y = y[..., ::-1]
    return np.ascontiguousarray(y)


def augment(img: Image, code: int) -> Image:
    return Image(augment_array(img.pixels, code))


# Each code as a signed permutation of (row, col) coordinates; used to compose codes.
def _code_matrix(code: int) -> np.ndarray:
    rot = np.array([[0, 1], [-1, 0]])
    m = np.linalg.matrix_power(rot, code % 4)
    if code >= 4:
        m = np.array([[1, 0], [0, -1]]) @ m
    return m


def compose(second: int, first: int) -> int:
    """Code equal to applying ``first`` then ``second``."""
    target = _code_matrix(second) @ _code_matrix(first)
    for c in range(8):
        if np.array_equal(_code_matrix(c), target):
            return c
    raise AssertionError("dihedral group is closed")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def psnr(a, b, max_val: float = 1.0) -> float:
    """PSNR over all channels jointly, capped at ``PSNR_CAP`` dB."""
    a = a.pixels if isinstance(a, Image) else np.asarray(a)
    b = b.pixels if isinstance(b, Image) else np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val * max_val / mse))


# ---------------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------------

_WS = b" \t\n\r\x0b\x0c"


def _read_header(data: bytes) -> tuple[str, int, int, int, int]:
    if len(data) < 2:
        raise ImageFormatError("file too short for a PNM magic number", 0)
    magic = data[:2].decode("latin-1")
    if magic not in ("P5", "P6"):
        raise ImageFormatError(f"unsupported magic {magic!r}; expected P5 or P6", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("expected a decimal header field", pos)
        fields.append(int(data[start:pos]))
    if pos >= len(data) or data[pos] not in _WS:
        raise ImageFormatError("missing whitespace after maxval", pos)
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"degenerate image size {width}x{height}", pos)
    if not 0 < maxval < 256:
        raise ImageFormatError(f"only 8-bit images are supported (maxval {maxval})", pos)
    return magic, width, height, maxval, pos


def decode_pnm(data: bytes) -> Image:
    magic, width, height, maxval, pos = _read_header(data)
    channels = 1 if magic == "P5" else 3
    need = width * height * channels
    if len(data) - pos < need:
        raise ImageFormatError(f"payload truncated: need {need} bytes, have {len(data) - pos}", len(data))
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    pixels = raw.reshape(height, width, channels).transpose(2, 0, 1).astype(np.float64) / maxval
    return Image(np.clip(pixels, 0.0, 1.0))


def to_bytes8(img: Image) -> np.ndarray:
    """Quantise to uint8 with round-half-up after clamping to [0, 1]."""
    return np.floor(np.clip(img.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_pnm(img: Image) -> bytes:
    c, h, w = img.shape
    magic = "P5" if c == 1 else "P6"
    body = to_bytes8(img).transpose(1, 2, 0).tobytes()
    return f"{magic}\n{w} {h}\n255\n".encode("ascii") + body


def load_image(path: str | os.PathLike) -> Image:
    return decode_pnm(Path(path).read_bytes())


def save_image(img: Image, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_pnm(img))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

IMAGE_SUFFIXES = (".pgm", ".ppm")


def _natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


def list_images(directory: str | os.PathLike) -> list[Path]:
    d = Path(directory)
    return sorted((p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=lambda p: _natural_key(p.name))


def load_dataset(root: str | os.PathLike) -> list[tuple[str, Image, Image | None]]:
    """``(name, clean, noisy-or-None)`` for every image under ``root/clean``."""
    root = Path(root)
    clean_dir = root / "clean"
    if not clean_dir.is_dir():
        raise FileNotFoundError(f"dataset directory {clean_dir} does not exist")
    out = []
    for path in list_images(clean_dir):
        noisy_path = root / "noisy" / path.name
        noisy = load_image(noisy_path) if noisy_path.exists() else None
        out.append((path.name, load_image(path), noisy))
    return out


def write_dataset(
    root: str | os.PathLike,
    images: Sequence[Image],
    noise: NoiseSpec | None = None,
    prefix: str = "img",
) -> Path:
    """Write ``clean/`` (and ``noisy/`` when ``noise`` is given) plus ``manifest.json``.

    Noisy files are clamped for storage; the i-th image uses stream key ``i``.
    """
    root = Path(root)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    if noise is not None:
        (root / "noisy").mkdir(parents=True, exist_ok=True)
    files = []
    for i, img in enumerate(images):
        name = f"{prefix}{i:03d}" + (".pgm" if img.shape[0] == 1 else ".ppm")
        save_image(img, root / "clean" / name)
        entry = {"file": name}
        if noise is not None:
            save_image(noise.apply(img, i).clamped(), root / "noisy" / name)
            entry["noise"] = noise.to_dict()
            entry["stream_key"] = i
        files.append(entry)
    manifest = {"rng": RNG_ALGORITHM, "files": files}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root


def synthetic_image(size: int, channels: int, rng: np.random.Generator) -> Image:
    """Piecewise-smooth test image: gradient background, rectangles, disks, a soft wave.

    Values are 8-bit representable so the image survives a PGM/PPM round trip.
    """
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    planes = []
    base_shapes = []
    for _ in range(rng.integers(3, 7)):
        kind = rng.integers(0, 2)
        cy, cx = rng.uniform(0, 1, 2)
        extent = rng.uniform(0.1, 0.45)
        if kind == 0:
            region = (np.abs(yy - cy) < extent * rng.uniform(0.4, 1)) & (np.abs(xx - cx) < extent * rng.uniform(0.4, 1))
        else:
            region = (yy - cy) ** 2 + (xx - cx) ** 2 < extent**2
        base_shapes.append(region)
    for _ in range(channels):
        gy, gx, g0 = rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.3, 0.7)
        plane = g0 + gy * (yy - 0.5) + gx * (xx - 0.5)
        for region in base_shapes:
            plane = np.where(region, rng.uniform(0.05, 0.95), plane)
        freq = rng.uniform(1.0, 4.0)
        plane = plane + 0.05 * np.sin(2 * np.pi * freq * (yy + rng.uniform())) * np.cos(2 * np.pi * freq * xx)
        planes.append(plane)
    pixels = np.clip(np.stack(planes), 0.0, 1.0)
    return Image(np.floor(pixels * 255 + 0.5) / 255.0)


def synthetic_images(count: int, size: int, channels: int = 1, seed: int = 0) -> list[Image]:
    return [synthetic_image(size, channels, make_rng(seed, i)) for i in range(count)]
