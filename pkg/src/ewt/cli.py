"""``ewt train | denoise | eval | bench | synth``.

Exit codes: 0 success, 2 usage or configuration, 3 I/O, 4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .config import load_run_config, render_run_config
from .data import RNG_ALGORITHM, NoiseSpec, list_images, load_dataset, load_image, psnr, save_image, synthetic_images, write_dataset
from .errors import ConfigError, ContractError, DimensionError, EWTError, ImageFormatError, LoadError
from .inference import denoise, evaluate
from .model import ModelConfig, activation_footprint, build, check_input_shape, flops_estimate
from .serialize import load, save
from .tensor import Tensor, default_dtype, no_grad
from .train import train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4
log = logging.getLogger("ewt")


class UsageError(EWTError):
    pass


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.steps is not None:
        cfg.train.steps = args.steps
        cfg.train.validate(cfg.model.multiple)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = list_images(cfg.train_dir / "clean")
    if not paths:
        raise UsageError(f"no .pgm/.ppm images in {cfg.train_dir / 'clean'}")
    images = [load_image(p) for p in paths]
    for p, img in zip(paths, images):
        if img.shape[0] != cfg.model.in_channels:
            raise UsageError(f"{p} has {img.shape[0]} channels, model expects {cfg.model.in_channels}")
    (out / "config.ini").write_text(render_run_config(cfg))
    manifest = {
        "rng": RNG_ALGORITHM,
        "seed": cfg.train.seed,
        "noise": cfg.noise.to_dict(),
        "images": [p.name for p in paths],
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2) + "\n")

    def checkpoint(model, step):
        save(model, out / f"ckpt_{step:06d}.ewt")

    with default_dtype(cfg.precision):
        model = build(cfg.model, cfg.train.seed)
        losses = train(model, images, cfg.train, cfg.noise, out / "metrics.csv", checkpoint)
    save(model, out / "final.ewt")
    if not args.no_plot:
        report.plot_loss(range(len(losses)), losses, out / "loss.png")
    print(f"trained {len(losses)} steps: loss {losses[0]:.5f} -> {losses[-1]:.5f}")
    print(f"wrote {out / 'final.ewt'} and {out / 'metrics.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# denoise
# ---------------------------------------------------------------------------


def cmd_denoise(args) -> int:
    model = load(None, args.model)
    img = load_image(args.input)
    if img.shape[0] != model.config.in_channels:
        raise UsageError(f"{args.input} has {img.shape[0]} channels, model expects {model.config.in_channels}")
    if args.tile is None:
        try:
            check_input_shape(model.config, (1,) + img.shape)
        except DimensionError as exc:
            raise UsageError(f"{exc}; pass --tile to denoise arbitrary sizes") from None
    restored = denoise(model, img, args.tile).clamped()
    save_image(restored, args.output)
    if args.ref:
        ref = load_image(args.ref)
        print(f"PSNR input {psnr(img, ref):.4f} dB -> output {psnr(restored, ref):.4f} dB")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    model = load(None, args.model)
    noise = NoiseSpec(args.noise, args.sigma, args.peak, args.seed)
    dataset = load_dataset(args.dataset)
    if not dataset:
        raise UsageError(f"no images under {Path(args.dataset) / 'clean'}")
    rows = evaluate(model, dataset, noise, args.tile)
    mean_noisy = float(np.mean([r[1] for r in rows]))
    mean_denoised = float(np.mean([r[2] for r in rows]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = [(name, f"{a:.4f}", f"{b:.4f}") for name, a, b in rows]
    table.append(("mean", f"{mean_noisy:.4f}", f"{mean_denoised:.4f}"))
    _write_csv(out / "eval.csv", ("file", "psnr_noisy", "psnr_denoised"), table)
    print(f"# PSNR over all channels jointly, outputs clamped to [0,1], cap {100:.0f} dB; noise {noise.to_dict()}")
    width = max(len(r[0]) for r in table)
    print(f"{'file':<{width}}  psnr_noisy  psnr_denoised")
    for name, a, b in table:
        print(f"{name:<{width}}  {a:>10}  {b:>13}")
    if not args.no_plot:
        report.plot_eval(rows, out / "eval.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def time_forward(model, size: int, runs: int = 20, warmup: int = 3, seed: int = 0) -> float:
    """Median wall-time of ``runs`` no-grad forward passes after ``warmup`` passes."""
    c = model.config.in_channels
    dtype = model.parameters()[0].dtype
    x = Tensor(np.random.default_rng(seed).random((1, c, size, size)), dtype=dtype)
    with no_grad():
        for _ in range(warmup):
            model(x)
        times = []
        for _ in range(runs):
            t0 = time.perf_counter()
            model(x)
            times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_rows(base: ModelConfig, levels, size: int, runs: int = 20, warmup: int = 3, seed: int = 0) -> list[dict]:
    rows = []
    for level in levels:
        cfg = base.replace(wavelet_level=level)
        check_input_shape(cfg, (1, cfg.in_channels, size, size))
        model = build(cfg, seed)
        rows.append(
            {
                "level": level,
                "params": model.param_count(),
                "flops": flops_estimate(cfg, size, size),
                "footprint": activation_footprint(cfg, size, size),
                "median_seconds": time_forward(model, size, runs, warmup, seed) if runs > 0 else float("nan"),
            }
        )
    return rows


def _parse_levels(text: str) -> list[int]:
    try:
        levels = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--levels must be comma-separated integers, got {text!r}") from None
    if not levels or any(level < 0 for level in levels):
        raise UsageError(f"--levels must list non-negative levels, got {text!r}")
    return levels


def cmd_bench(args) -> int:
    base = load_run_config(args.config, require_paths=False).model if args.config else ModelConfig()
    levels = _parse_levels(args.levels)
    if args.runs < 1 or args.warmup < 0:
        raise UsageError("--runs must be >= 1 and --warmup >= 0")
    rows = bench_rows(base, levels, args.size, args.runs, args.warmup, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ("level", "params", "flops", "footprint", "median_seconds")
    _write_csv(out / "bench.csv", header, [[r[k] if k != "median_seconds" else f"{r[k]:.6f}" for k in header] for r in rows])
    print(f"# size {args.size}x{args.size}, median of {args.runs} runs after {args.warmup} warmups; flops are MACs")
    print(f"{'level':>5} {'params':>10} {'flops':>14} {'footprint':>11} {'seconds':>9}")
    for r in rows:
        print(f"{r['level']:>5} {r['params']:>10} {r['flops']:>14} {r['footprint']:>11} {r['median_seconds']:>9.4f}")
    for prev, cur in zip(rows, rows[1:]):
        print(f"# flops ratio L{prev['level']}/L{cur['level']} = {prev['flops'] / cur['flops']:.3f}")
    if not args.no_plot:
        report.plot_bench(rows, out / "bench.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    images = synthetic_images(args.count, args.size, args.channels, args.seed)
    noise = NoiseSpec("gaussian", args.sigma, seed=args.seed) if args.sigma is not None else None
    root = write_dataset(args.root, images, noise)
    print(f"wrote {len(images)} images to {root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ewt", description="wavelet-domain transformer image denoiser")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from an INI run config")
    p.add_argument("config")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise one PGM/PPM image")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--tile", type=int)
    p.add_argument("--ref", help="clean reference; prints PSNR")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="PSNR table over a dataset directory")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--noise", default="gaussian", choices=("gaussian", "poisson", "speckle"))
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--peak", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tile", type=int)
    p.add_argument("--out", default=".")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="cost table across wavelet levels")
    p.add_argument("config", nargs="?")
    p.add_argument("--levels", default="1,2,3")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic clean (and noisy) dataset")
    p.add_argument("root")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--channels", type=int, default=1, choices=(1, 3))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, help="also write noisy/ with this AWGN sigma")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DimensionError, ContractError, UsageError) as exc:
        print(f"ewt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ImageFormatError, LoadError) as exc:
        print(f"ewt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EWTError, AssertionError, FloatingPointError) as exc:
        print(f"ewt: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
