"""INI run configuration (``key = value`` under sections).

Schema, version 1::

    [meta]
    schema_version = 1

    [model]            ; any ModelConfig field, e.g.
    in_channels = 1
    embed_dim = 16

    [train]            ; any TrainConfig field, plus
    precision = float32

    [data]
    train_dir = data/train     ; dataset root holding clean/
    noise = gaussian           ; gaussian | poisson | speckle
    sigma = 25
    peak = 30
    noise_seed = 0             ; defaults to train.seed

    [output]
    dir = runs/toy

Relative paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import configparser
import io
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import NoiseSpec
from .errors import ConfigError, ContractError
from .model import ModelConfig
from .train import TrainConfig

SCHEMA_VERSION = 1
_SECTIONS = {"meta", "model", "train", "data", "output"}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    train_dir: Path | None = None
    output_dir: Path = Path("runs/ewt")
    precision: str = "float32"


def _typed(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_run_config(text: str, base_dir: Path | str = ".", require_paths: bool = True) -> RunConfig:
    base_dir = Path(base_dir)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    problems: list[str] = []
    unknown = set(parser.sections()) - _SECTIONS
    if unknown:
        problems.append(f"unknown sections {sorted(unknown)}")
    version = parser.get("meta", "schema_version", fallback=None)
    if version is None:
        problems.append("meta.schema_version is missing")
    elif version.strip() != str(SCHEMA_VERSION):
        problems.append(f"meta.schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")

    model = None
    try:
        model = ModelConfig.from_dict(dict(parser["model"])) if parser.has_section("model") else ModelConfig()
    except ConfigError as exc:
        problems.append(str(exc))

    train_values = dict(parser["train"]) if parser.has_section("train") else {}
    precision = train_values.pop("precision", "float32").strip()
    if precision not in ("float32", "float64"):
        problems.append(f"train.precision must be float32 or float64 (got {precision!r})")
    train_cfg = TrainConfig()
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    for key, raw in train_values.items():
        if key not in train_fields:
            problems.append(f"train.{key} is not a known key")
            continue
        try:
            setattr(train_cfg, key, _typed("train", key, raw, getattr(train_cfg, key)))
        except ConfigError as exc:
            problems.append(str(exc))
    try:
        train_cfg.validate(model.multiple if model else None)
    except ConfigError as exc:
        problems.append(str(exc))

    data = parser["data"] if parser.has_section("data") else {}
    noise = NoiseSpec()
    try:
        noise = NoiseSpec(
            kind=data.get("noise", "gaussian").strip(),
            sigma=float(data.get("sigma", 25)),
            peak=float(data.get("peak", 30)),
            seed=int(data.get("noise_seed", train_cfg.seed)),
        )
    except (ValueError, ContractError) as exc:
        problems.append(f"data: {exc}")
    train_dir = None
    if "train_dir" in data:
        train_dir = (base_dir / data["train_dir"].strip()).resolve()
        if require_paths and not (train_dir / "clean").is_dir():
            problems.append(f"data.train_dir: {train_dir / 'clean'} does not exist")
    elif require_paths:
        problems.append("data.train_dir is required")
    out = parser.get("output", "dir", fallback="runs/ewt").strip()

    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return RunConfig(model, train_cfg, noise, train_dir, (base_dir / out).resolve(), precision)


def load_run_config(path: str | Path, require_paths: bool = True) -> RunConfig:
    path = Path(path)
    return parse_run_config(path.read_text(), path.parent, require_paths)


def render_run_config(cfg: RunConfig) -> str:
    """Serialise back to INI text (used to snapshot a run)."""
    parser = configparser.ConfigParser()
    parser["meta"] = {"schema_version": str(SCHEMA_VERSION)}
    parser["model"] = {k: str(v) for k, v in cfg.model.to_dict().items()}
    train = {k: str(v) for k, v in dataclasses.asdict(cfg.train).items()}
    train["precision"] = cfg.precision
    parser["train"] = train
    data = {"noise": cfg.noise.kind, "sigma": str(cfg.noise.sigma), "peak": str(cfg.noise.peak), "noise_seed": str(cfg.noise.seed)}
    if cfg.train_dir is not None:
        data["train_dir"] = str(cfg.train_dir)
    parser["data"] = data
    parser["output"] = {"dir": str(cfg.output_dir)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
