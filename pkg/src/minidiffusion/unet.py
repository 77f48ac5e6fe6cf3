"""Minimal noise-prediction U-Net.

Four conv down blocks (two stride-2), one residual middle block where
timestep and label embeddings are injected by broadcast addition, four up
blocks with additive skip connections. Group norm uses 32 groups and no
affine parameters throughout; no attention anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import (
    Tensor,
    conv2d,
    embedding_lookup,
    group_norm,
    linear,
    no_grad,
    relu,
    reshape,
    upsample_nearest2x,
)

NORM_GROUPS = 32
EMBED_MAX_PERIOD = 10000.0


def timestep_embedding(t, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal encoding of integer timesteps, cosine half first.

    freqs[j] = exp(-ln(max_period) * j / (dim/2)); row i is
    [cos(t_i * freqs), sin(t_i * freqs)] concatenated to length dim.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(EMBED_MAX_PERIOD) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(dtype)


@dataclass(frozen=True)
class UNetConfig:
    io_channels: int = 1
    model_channels: int = 32
    class_count: int | None = None  # presence makes the model conditional
    depth_extension: bool = False  # extra convs per block + second middle residual

    def __post_init__(self):
        if self.model_channels % NORM_GROUPS != 0:
            raise ValueError(
                f"model_channels must be divisible by {NORM_GROUPS}, got {self.model_channels}"
            )
        if self.io_channels < 1:
            raise ValueError(f"io_channels must be >= 1, got {self.io_channels}")
        if self.class_count is not None and self.class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {self.class_count}")


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance: eps = eps_cond + weight * (eps_cond - eps_uncond)."""

    weight: float = 0.0
    null_label: int | None = None  # defaults to the model's reserved null row

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"guidance weight must be >= 0, got {self.weight}")


def _init_conv(params, rng, name, out_ch, in_ch, k, dtype):
    bound = 1.0 / math.sqrt(in_ch * k * k)
    w = (rng.uniform((out_ch, in_ch, k, k)) * 2.0 - 1.0) * bound
    params[f"{name}.w"] = Tensor(w.astype(dtype), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)


def _init_linear(params, rng, name, out_n, in_n, dtype):
    bound = 1.0 / math.sqrt(in_n)
    w = (rng.uniform((out_n, in_n)) * 2.0 - 1.0) * bound
    params[f"{name}.w"] = Tensor(w.astype(dtype), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(out_n, dtype=dtype), requires_grad=True)


def init_residual_params(params: dict, rng: Rng, prefix: str, in_ch: int, out_ch: int, dtype=np.float32) -> None:
    """Parameters for one residual block; 1x1 shortcut only if channels change."""
    _init_conv(params, rng, f"{prefix}.conv1", out_ch, in_ch, 3, dtype)
    _init_conv(params, rng, f"{prefix}.conv2", out_ch, out_ch, 3, dtype)
    if in_ch != out_ch:
        _init_conv(params, rng, f"{prefix}.shortcut", out_ch, in_ch, 1, dtype)


def residual_block(params: dict, prefix: str, x: Tensor) -> Tensor:
    """Two 3x3 convs with post-conv group norm and relu, plus a shortcut."""
    h = relu(group_norm(conv2d(x, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"], padding=1), NORM_GROUPS))
    h = relu(group_norm(conv2d(h, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"], padding=1), NORM_GROUPS))
    skey = f"{prefix}.shortcut.w"
    shortcut = conv2d(x, params[skey], params[f"{prefix}.shortcut.b"]) if skey in params else x
    return h + shortcut


class UNet:
    """ε-predictor: (x_t, t [, label]) -> predicted noise, same shape as x_t.

    Parameters live in an ordered name -> Tensor dict; the names are the
    stable identifiers the checkpoint codec keys on.
    """

    def __init__(self, config: UNetConfig, rng: Rng, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        c = config.model_channels
        io = config.io_channels
        p: dict[str, Tensor] = {}
        # down path: plain conv / strided conv, alternating
        _init_conv(p, rng, "down1", c, io, 3, dtype)
        _init_conv(p, rng, "down2", c, c, 3, dtype)
        _init_conv(p, rng, "down3", 2 * c, c, 3, dtype)
        _init_conv(p, rng, "down4", 2 * c, 2 * c, 3, dtype)
        init_residual_params(p, rng, "middle", 2 * c, 2 * c, dtype)
        if config.depth_extension:
            init_residual_params(p, rng, "middle2", 2 * c, 2 * c, dtype)
        _init_linear(p, rng, "time_emb", 2 * c, c, dtype)
        if config.class_count is not None:
            # one extra row reserved as the null (unconditional) label
            table = rng.standard_normal((config.class_count + 1, 2 * c)).astype(dtype)
            p["class_emb.table"] = Tensor(table, requires_grad=True)
        _init_conv(p, rng, "up1", 2 * c, 2 * c, 3, dtype)
        _init_conv(p, rng, "up2", c, 2 * c, 3, dtype)
        _init_conv(p, rng, "up3", c, c, 3, dtype)
        _init_conv(p, rng, "up4", io, c, 3, dtype)
        if config.depth_extension:
            for name, ch in (("down1", c), ("down2", c), ("down3", 2 * c), ("down4", 2 * c),
                             ("up1", 2 * c), ("up2", c), ("up3", c)):
                _init_conv(p, rng, f"{name}.extra", ch, ch, 3, dtype)
        self.params = p

    # -- parameter plumbing ---------------------------------------------------

    @property
    def conditional(self) -> bool:
        return self.config.class_count is not None

    @property
    def null_label(self) -> int:
        if not self.conditional:
            raise ValueError("unconditional model has no null label")
        return self.config.class_count

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    @classmethod
    def from_arrays(cls, config: UNetConfig, arrays: dict[str, np.ndarray], dtype=np.float32) -> "UNet":
        model = cls(config, Rng(0), dtype=dtype)
        expected = set(model.params)
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        for name, t in model.params.items():
            arr = np.asarray(arrays[name], dtype=dtype)
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} != {t.shape}")
            model.params[name] = Tensor(arr, requires_grad=True)
        return model

    # -- forward ----------------------------------------------------------------

    def _conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        h = conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=stride, padding=1)
        h = relu(group_norm(h, NORM_GROUPS))
        extra = f"{name}.extra.w"
        if extra in self.params:
            h = conv2d(h, self.params[extra], self.params[f"{name}.extra.b"], padding=1)
            h = relu(group_norm(h, NORM_GROUPS))
        return h

    def predict(self, x, t, label=None) -> Tensor:
        """Predicted noise for x_t at timesteps t (and labels, if conditional)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        B, C, H, W = x.shape
        if C != self.config.io_channels:
            raise ValueError(f"expected {self.config.io_channels} channels, got {C}")
        if H % 4 != 0 or W % 4 != 0:
            raise ValueError(f"spatial extents must be divisible by 4, got {H}x{W}")
        if self.conditional:
            if label is None:
                raise ValueError("conditional model requires a label (null label allowed)")
            label = np.asarray(label)
        elif label is not None:
            raise ValueError("label provided to an unconditional model")

        x1 = self._conv("down1", x)
        x2 = self._conv("down2", x1, stride=2)
        x3 = self._conv("down3", x2)
        x4 = self._conv("down4", x3, stride=2)

        middle = residual_block(self.params, "middle", x4)
        if self.config.depth_extension:
            middle = residual_block(self.params, "middle2", middle)
        emb = Tensor(timestep_embedding(t, self.config.model_channels, dtype=self.dtype))
        cond = relu(linear(emb, self.params["time_emb.w"], self.params["time_emb.b"]))
        if self.conditional:
            cond = cond + relu(embedding_lookup(self.params["class_emb.table"], label))
        middle = middle + reshape(cond, cond.shape + (1, 1))

        x5 = self._conv("up1", upsample_nearest2x(middle + x4))
        x6 = self._conv("up2", x5 + x3)
        x7 = self._conv("up3", upsample_nearest2x(x6 + x2))
        # final projection: plain conv, no norm or activation
        return conv2d(x7 + x1, self.params["up4.w"], self.params["up4.b"], padding=1)


def guided_predict(model: UNet, xt: np.ndarray, t, label=None, guidance: GuidanceConfig | None = None) -> np.ndarray:
    """Noise prediction with optional classifier-free guidance, as an array.

    With weight w > 0: eps_cond + w * (eps_cond - eps_uncond), the null label
    supplying the unconditional branch. w = 0 (or no guidance) is a single
    model evaluation.
    """
    with no_grad():
        if guidance is None or guidance.weight == 0.0:
            return model.predict(Tensor(xt), t, label).data
        if not model.conditional:
            raise ValueError("guidance requires a conditional model")
        if label is None:
            raise ValueError("guidance requires a target label")
        null = guidance.null_label if guidance.null_label is not None else model.null_label
        null_batch = np.full(np.asarray(xt).shape[0], null, dtype=np.int64)
        eps_cond = model.predict(Tensor(xt), t, label).data
        eps_uncond = model.predict(Tensor(xt), t, null_batch).data
        return eps_cond + guidance.weight * (eps_cond - eps_uncond)
