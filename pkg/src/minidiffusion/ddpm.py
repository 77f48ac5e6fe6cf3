"""Stochastic ancestral sampling: posterior moments, one step, full loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import predict_x0_from_noise
from .rng import Rng
from .schedules import ScheduleTable, extract
from .unet import GuidanceConfig, guided_predict


@dataclass(frozen=True)
class PosteriorMoments:
    mean: np.ndarray
    variance: np.ndarray
    log_variance: np.ndarray


def q_posterior(schedule: ScheduleTable, x0: np.ndarray, xt: np.ndarray, t) -> PosteriorMoments:
    """Moments of the Gaussian reverse-step posterior given x0 and x_t."""
    x0 = np.asarray(x0)
    xt = np.asarray(xt)
    if x0.shape != xt.shape:
        raise ValueError(f"x0 shape {x0.shape} != xt shape {xt.shape}")
    coef1 = extract(schedule.posterior_mean_coef1, t, xt.ndim, dtype=xt.dtype)
    coef2 = extract(schedule.posterior_mean_coef2, t, xt.ndim, dtype=xt.dtype)
    mean = coef1 * x0 + coef2 * xt
    variance = np.broadcast_to(extract(schedule.posterior_variance, t, xt.ndim, dtype=xt.dtype), xt.shape)
    log_variance = np.broadcast_to(
        extract(schedule.posterior_log_variance_clipped, t, xt.ndim, dtype=xt.dtype), xt.shape
    )
    return PosteriorMoments(mean=mean, variance=variance, log_variance=log_variance)


def p_mean_variance(
    schedule: ScheduleTable,
    model,
    xt: np.ndarray,
    t,
    guidance: GuidanceConfig | None = None,
    label=None,
) -> PosteriorMoments:
    """Posterior moments using the model's noise prediction, x0 clamped to [-1, 1]."""
    eps = guided_predict(model, xt, t, label, guidance)
    x0 = predict_x0_from_noise(schedule, xt, t, eps)
    x0 = np.clip(x0, -1.0, 1.0)  # clip_denoised
    return q_posterior(schedule, x0, xt, t)


def p_sample(
    schedule: ScheduleTable,
    model,
    xt: np.ndarray,
    t,
    rng: Rng,
    guidance: GuidanceConfig | None = None,
    label=None,
) -> np.ndarray:
    """One reverse step x_t -> x_{t-1}; rows with t == 0 get the mean only.

    The noise draw always happens (then is masked), so rng consumption does
    not depend on t. Only the stored log-variance is exponentiated: no direct
    sqrt of a possibly-zero variance.
    """
    xt = np.asarray(xt)
    moments = p_mean_variance(schedule, model, xt, t, guidance, label)
    noise = rng.standard_normal(xt.shape).astype(xt.dtype)
    t = np.asarray(t)
    mask = (t != 0).astype(xt.dtype).reshape((-1,) + (1,) * (xt.ndim - 1))
    return moments.mean + mask * np.exp(0.5 * moments.log_variance) * noise


def sample_loop(
    schedule: ScheduleTable,
    model,
    image_size: int,
    batch_size: int,
    channels: int,
    rng: Rng,
    guidance: GuidanceConfig | None = None,
    label=None,
    record_every: int | None = None,
) -> list[np.ndarray]:
    """Full reverse chain from pure noise; one p_sample per timestep.

    Returns snapshots taken before each step whose t is a multiple of
    record_every, plus the final x_0 (always last). record_every=None keeps
    only the final frame.
    """
    T = schedule.timesteps
    x = rng.standard_normal((batch_size, channels, image_size, image_size)).astype(np.float32)
    frames: list[np.ndarray] = []
    for i in reversed(range(T)):
        if record_every is not None and i % record_every == 0:
            frames.append(x.copy())
        t = np.full(batch_size, i, dtype=np.int64)
        x = p_sample(schedule, model, x, t, rng, guidance, label)
    frames.append(x)
    return frames
