"""Deterministic skip-step sampling over a sub-sequence of schedule indices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .schedules import ScheduleTable
from .unet import GuidanceConfig, guided_predict


@dataclass(frozen=True)
class DdimPlan:
    """Visited schedule indices (strictly increasing) and their predecessors."""

    steps: int
    seq: np.ndarray  # seq[i] = 1 + i * (T // steps)
    seq_prev: np.ndarray  # [0, seq[0], ..., seq[-2]]


def build_plan(timesteps: int, ddim_steps: int) -> DdimPlan:
    """Evenly spaced index plan with stride floor(T / S)."""
    if not 1 <= ddim_steps <= timesteps:
        raise ValueError(f"ddim steps must lie in [1, {timesteps}], got {ddim_steps}")
    c = timesteps // ddim_steps
    seq = 1 + c * np.arange(ddim_steps, dtype=np.int64)
    if seq[-1] >= timesteps:
        # the "+1" construction walks off the table for S too close to T
        raise ValueError(
            f"plan index {seq[-1]} out of range [0, {timesteps}); choose fewer ddim steps"
        )
    seq_prev = np.concatenate([[0], seq[:-1]])
    return DdimPlan(steps=ddim_steps, seq=seq, seq_prev=seq_prev)


def ddim_step(
    schedule: ScheduleTable,
    model,
    xt: np.ndarray,
    t_idx: int,
    t_prev_idx: int,
    guidance: GuidanceConfig | None = None,
    label=None,
) -> np.ndarray:
    """One deterministic update from schedule index t_idx down to t_prev_idx.

    x_prev = sqrt(abar_prev) * clamp(x0_hat) + sqrt(1 - abar_prev) * eps_hat;
    no noise term is added anywhere.
    """
    if not 0 <= t_prev_idx < t_idx:
        raise ValueError(f"need 0 <= t_prev < t, got t={t_idx}, t_prev={t_prev_idx}")
    xt = np.asarray(xt)
    dtype = xt.dtype
    # both gathered straight from alphas_cumprod (index 0 is abar_0, not the padded 1)
    abar_t = dtype.type(schedule.alphas_cumprod[t_idx])
    abar_prev = dtype.type(schedule.alphas_cumprod[t_prev_idx])

    t = np.full(xt.shape[0], t_idx, dtype=np.int64)
    eps = guided_predict(model, xt, t, label, guidance)
    x0 = (xt - np.sqrt(1.0 - abar_t, dtype=dtype) * eps) / np.sqrt(abar_t, dtype=dtype)
    x0 = np.clip(x0, -1.0, 1.0)
    return np.sqrt(abar_prev, dtype=dtype) * x0 + np.sqrt(1.0 - abar_prev, dtype=dtype) * eps


def ddim_sample_loop(
    schedule: ScheduleTable,
    model,
    image_size: int,
    batch_size: int,
    channels: int,
    ddim_steps: int,
    rng: Rng,
    guidance: GuidanceConfig | None = None,
    label=None,
) -> list[np.ndarray]:
    """Skip-step reverse chain: exactly ddim_steps model evaluations.

    The only randomness is the initial x_T draw; the returned trajectory is
    [x_T, ..., x_0] with one frame per step.
    """
    plan = build_plan(schedule.timesteps, ddim_steps)
    x = rng.standard_normal((batch_size, channels, image_size, image_size)).astype(np.float32)
    frames = [x]
    for i in reversed(range(plan.steps)):
        x = ddim_step(schedule, model, x, int(plan.seq[i]), int(plan.seq_prev[i]), guidance, label)
        frames.append(x)
    return frames
