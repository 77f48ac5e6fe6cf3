"""Training loop: uniform timestep draws, MSE objective, Adam, checkpoints."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, OptimizerSnapshot, save_checkpoint
from .datasets import DatasetHandle
from .forward import sample_timesteps, train_loss
from .rng import Rng
from .schedules import build_schedule
from .tensor import Tensor
from .unet import UNet, UNetConfig

# purpose tags for independent rng streams; toggling one knob (e.g. p_uncond)
# must not perturb the draws of the others
STREAM_INIT = 0
STREAM_TIMESTEP = 1
STREAM_NOISE = 2
STREAM_DROPOUT = 3
STREAM_SHUFFLE_BASE = 1000  # + epoch


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 2e-4
    timesteps: int = 300
    dataset: str = "mnist"
    conditional: bool = False
    p_uncond: float = 0.1  # label-dropout rate for the classifier-free null branch
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 = only at the end
    out_dir: str | Path = "runs"
    model_channels: int = 32
    depth_extension: bool = False
    grad_clip: float | None = None  # global grad-norm rescue, off by default

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.p_uncond < 1.0:
            raise ValueError(f"p_uncond must lie in [0, 1), got {self.p_uncond}")


class Adam:
    """Adaptive-moment optimizer with bias correction; deterministic."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - np.asarray(lr, dtype=p.dtype) * update.astype(p.dtype, copy=False)

    def snapshot(self) -> OptimizerSnapshot:
        moments = {f"m.{k}": v for k, v in self.m.items()}
        moments.update({f"v.{k}": v for k, v in self.v.items()})
        return OptimizerSnapshot(step_count=self.step_count, moments=moments)

    @classmethod
    def from_snapshot(cls, snap: OptimizerSnapshot) -> "Adam":
        opt = cls()
        opt.step_count = snap.step_count
        for key, arr in snap.moments.items():
            kind, _, name = key.partition(".")
            if kind == "m":
                opt.m[name] = arr.copy()
            elif kind == "v":
                opt.v[name] = arr.copy()
        return opt


def _clip_gradients(params: dict[str, Tensor], max_norm: float) -> None:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = total**0.5
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * p.dtype.type(scale)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    checkpoint_path: Path
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def _make_checkpoint(cfg: TrainConfig, model: UNet, opt: Adam, streams: dict[str, Rng], epoch: int) -> Checkpoint:
    return Checkpoint(
        timesteps=cfg.timesteps,
        schedule_kind="linear",
        unet_config=model.config,
        epoch=epoch,
        rng_states={name: r.state for name, r in streams.items()},
        tensors=model.param_arrays(),
        optimizer=opt.snapshot(),
    )


def train(cfg: TrainConfig, data: DatasetHandle, resume: Checkpoint | None = None, log=print) -> TrainResult:
    """Run the optimization loop and return the final checkpoint.

    Fully deterministic for a given (cfg.seed, data): timesteps, noise and
    label dropout come from separate streams, and the per-epoch shuffle is
    keyed on (seed, epoch), so a run resumed from a checkpoint continues the
    exact loss trajectory of an uninterrupted one.
    """
    if cfg.conditional and data.labels is None:
        raise ValueError("conditional training requires a labeled dataset")
    _, h, w = data.image_shape
    if h % 4 != 0 or w % 4 != 0:
        raise ValueError(f"image extents must be divisible by 4, got {h}x{w}")

    schedule = build_schedule(cfg.timesteps)
    root = Rng(cfg.seed)
    streams = {
        "timestep": root.fork(STREAM_TIMESTEP),
        "noise": root.fork(STREAM_NOISE),
        "dropout": root.fork(STREAM_DROPOUT),
    }

    model_cfg = UNetConfig(
        io_channels=data.image_shape[0],
        model_channels=cfg.model_channels,
        class_count=data.class_count if cfg.conditional else None,
        depth_extension=cfg.depth_extension,
    )
    if resume is not None:
        if resume.unet_config != model_cfg:
            raise ValueError(f"checkpoint config {resume.unet_config} != requested {model_cfg}")
        if resume.timesteps != cfg.timesteps:
            raise ValueError(f"checkpoint trained with T={resume.timesteps}, requested T={cfg.timesteps}")
        model = UNet.from_arrays(model_cfg, resume.tensors)
        opt = Adam.from_snapshot(resume.optimizer) if resume.optimizer else Adam()
        for name, rng in streams.items():
            rng.state = resume.rng_states[name]
        start_epoch = resume.epoch
        if start_epoch >= cfg.epochs:
            raise ValueError(f"checkpoint already at epoch {start_epoch}, nothing to train")
    else:
        model = UNet(model_cfg, root.fork(STREAM_INIT))
        opt = Adam()
        start_epoch = 0

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    new_log = resume is None or not metrics_path.exists()
    metrics_file = open(metrics_path, "w" if new_log else "a", newline="")
    metrics = csv.writer(metrics_file)
    if new_log:
        metrics.writerow(["epoch", "step", "loss", "wallclock_s"])

    result = TrainResult(checkpoint=None, checkpoint_path=out_dir / "model.ckpt")  # type: ignore[arg-type]
    t0 = time.perf_counter()
    global_step = start_epoch * ((len(data) + cfg.batch_size - 1) // cfg.batch_size)
    try:
        for epoch in range(start_epoch, cfg.epochs):
            epoch_losses = []
            shuffle_seed = Rng(cfg.seed).fork(STREAM_SHUFFLE_BASE + epoch).state
            for x0, labels in data.batches(cfg.batch_size, seed=shuffle_seed):
                t = sample_timesteps(streams["timestep"], len(x0), cfg.timesteps)
                if cfg.conditional:
                    drop = streams["dropout"].uniform(len(x0)) < cfg.p_uncond
                    labels = np.where(drop, model.null_label, labels)
                else:
                    labels = None
                loss = train_loss(schedule, model, x0, t, streams["noise"], labels)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch + 1}, step {global_step + 1}"
                    )
                model.zero_grad()
                loss.backward()
                if cfg.grad_clip is not None:
                    _clip_gradients(model.params, cfg.grad_clip)
                opt.step(model.params, cfg.learning_rate)
                global_step += 1
                epoch_losses.append(value)
                result.step_losses.append(value)
                metrics.writerow([epoch + 1, global_step, repr(value), f"{time.perf_counter() - t0:.3f}"])
            mean_loss = float(np.mean(epoch_losses))
            result.epoch_losses.append(mean_loss)
            log(f"epoch {epoch + 1}/{cfg.epochs}: mean loss {mean_loss:.6f}")
            metrics_file.flush()
            last = epoch + 1 == cfg.epochs
            if last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0):
                ck = _make_checkpoint(cfg, model, opt, streams, epoch + 1)
                save_checkpoint(result.checkpoint_path, ck)
                result.checkpoint = ck
    finally:
        metrics_file.close()
    return result
