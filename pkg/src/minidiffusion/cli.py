"""Command-line entry point: train, sample, schedule.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every run prints
its fully resolved configuration before acting. All artifacts are files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, validate_schedule
from .datasets import DataFormatError, load_dataset
from .ddim import ddim_sample_loop
from .ddpm import sample_loop
from .imaging import write_image_grid, write_trajectory_grid
from .rng import Rng
from .schedules import ScheduleError, build_schedule, write_schedule_csv
from .trainer import TrainConfig, TrainingDiverged, train
from .unet import GuidanceConfig, UNet


class UsageError(ValueError):
    """Inconsistent or invalid flag combination."""


def _print_config(args: argparse.Namespace) -> None:
    pairs = " ".join(f"{k}={v}" for k, v in sorted(vars(args).items()) if k != "func")
    print(f"config: {pairs}")


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Pull `--config file` of flat key=value lines in as parser defaults."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        path = argv[i + 1]
    except IndexError:
        parser.error("--config requires a path")
    argv = argv[:i] + argv[i + 2 :]
    defaults = {}
    try:
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                parser.error(f"--config {path}: malformed line {line!r}")
            defaults[key.strip().replace("-", "_")] = _coerce_value(value.strip())
    except OSError as e:
        parser.error(f"--config: {e}")
    parser.set_defaults(**defaults)
    return argv


def _coerce_value(value: str):
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def cmd_schedule(args) -> int:
    table = build_schedule(args.timesteps)
    if args.out:
        with open(args.out, "w", newline="") as f:
            write_schedule_csv(table, f)
        print(f"wrote {args.out}")
    else:
        write_schedule_csv(table, sys.stdout)
    return 0


def cmd_train(args) -> int:
    data_dir = Path(args.data_dir)
    if not data_dir.is_dir():
        raise UsageError(f"dataset path {data_dir} does not exist")
    data = load_dataset(args.dataset, data_dir, limit=args.limit)
    cfg = TrainConfig(
        epochs=int(args.epochs),
        batch_size=int(args.batch_size),
        learning_rate=float(args.lr),
        timesteps=int(args.timesteps),
        dataset=args.dataset,
        conditional=bool(args.conditional),
        p_uncond=float(args.p_uncond),
        seed=int(args.seed),
        checkpoint_every=int(args.checkpoint_every),
        out_dir=args.out_dir,
        model_channels=int(args.channels),
        depth_extension=bool(args.deeper),
        grad_clip=None if args.grad_clip is None else float(args.grad_clip),
    )
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(cfg, data, resume=resume)
    print(f"final checkpoint: {result.checkpoint_path}")
    return 0


def cmd_sample(args) -> int:
    if args.sampler == "ddim" and args.steps is None:
        raise UsageError("--sampler ddim requires --steps")
    if args.sampler == "ddpm" and args.steps is not None:
        raise UsageError("--steps applies only to --sampler ddim")

    ck = load_checkpoint(args.checkpoint)
    requested_t = ck.timesteps if args.timesteps is None else int(args.timesteps)
    validate_schedule(ck, requested_t)
    schedule = build_schedule(ck.timesteps)
    model = UNet.from_arrays(ck.unet_config, ck.tensors)

    conditional = model.conditional
    if not conditional and (args.label is not None or args.guidance > 0):
        raise UsageError("--label/--guidance require a conditional checkpoint")
    label = None
    guidance = None
    if conditional:
        target = model.null_label if args.label is None else int(args.label)
        if not 0 <= target <= model.null_label:
            raise UsageError(f"label must lie in [0, {model.null_label}], got {target}")
        label = np.full(args.batch, target, dtype=np.int64)
        if args.guidance > 0:
            guidance = GuidanceConfig(weight=float(args.guidance))

    rng = Rng(args.seed)
    if args.sampler == "ddim":
        frames = ddim_sample_loop(
            schedule, model, args.image_size, args.batch, ck.unet_config.io_channels,
            int(args.steps), rng, guidance, label,
        )
    else:
        record_every = args.record_every if args.trajectory else None
        frames = sample_loop(
            schedule, model, args.image_size, args.batch, ck.unet_config.io_channels,
            rng, guidance, label, record_every=record_every,
        )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if ck.unet_config.io_channels == 1 else "ppm"
    cols = args.cols or int(np.ceil(np.sqrt(args.batch)))
    grid_path = out_dir / f"samples_{args.sampler}.{ext}"
    write_image_grid(frames[-1], cols=cols, path=grid_path)
    print(f"wrote {grid_path}")
    if args.trajectory:
        traj_path = out_dir / f"trajectory_{args.sampler}.{ext}"
        write_trajectory_grid(frames, traj_path)
        print(f"wrote {traj_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minidiffusion",
        description="Train and sample small pixel-space diffusion models (DDPM / DDIM / CFG).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a noise-prediction U-Net")
    p_train.add_argument("--dataset", choices=["mnist", "fashion-mnist", "cifar10"], default="mnist")
    p_train.add_argument("--data-dir", required=True, help="directory with the native binary files")
    p_train.add_argument("--epochs", type=int, default=200)
    p_train.add_argument("--batch-size", type=int, default=64)
    p_train.add_argument("--lr", type=float, default=2e-4)
    p_train.add_argument("--timesteps", type=int, default=300)
    p_train.add_argument("--channels", type=int, default=128, help="base model channels")
    p_train.add_argument("--conditional", action="store_true", help="train with label conditioning")
    p_train.add_argument("--p-uncond", type=float, default=0.1, help="label dropout rate (0 disables)")
    p_train.add_argument("--deeper", action="store_true", help="extra convs per block (CIFAR-scale)")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--checkpoint-every", type=int, default=0, help="epochs between checkpoints")
    p_train.add_argument("--grad-clip", type=float, default=None, help="global grad-norm cap")
    p_train.add_argument("--limit", type=int, default=None, help="use only the first N samples")
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")
    p_train.add_argument("--out-dir", default="runs")
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="generate an image grid from a checkpoint")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--sampler", choices=["ddpm", "ddim"], default="ddpm")
    p_sample.add_argument("--steps", type=int, default=None, help="ddim step count")
    p_sample.add_argument("--batch", type=int, default=64)
    p_sample.add_argument("--cols", type=int, default=None, help="grid columns (default: near-square)")
    p_sample.add_argument("--image-size", type=int, default=28)
    p_sample.add_argument("--label", type=int, default=None, help="target class (conditional models)")
    p_sample.add_argument("--guidance", type=float, default=0.0, help="classifier-free guidance weight")
    p_sample.add_argument("--timesteps", type=int, default=None, help="must match the checkpoint")
    p_sample.add_argument("--trajectory", action="store_true", help="also write denoising frames")
    p_sample.add_argument("--record-every", type=int, default=30, help="ddpm frame stride for --trajectory")
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--out-dir", default="samples")
    p_sample.set_defaults(func=cmd_sample)

    p_sched = sub.add_parser("schedule", help="dump the coefficient table as CSV")
    p_sched.add_argument("--timesteps", type=int, required=True)
    p_sched.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p_sched.set_defaults(func=cmd_schedule)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _apply_config_file(parser, argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _print_config(args)
    try:
        return args.func(args)
    except (UsageError, ScheduleError) as e:
        print(f"error: {e}", file=sys.stderr)
        print("run with --help for usage", file=sys.stderr)
        return 2
    except (CheckpointError, DataFormatError, TrainingDiverged, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
