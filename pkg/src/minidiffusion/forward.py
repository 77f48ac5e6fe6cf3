"""Closed-form forward noising and the noise-prediction training objective."""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .schedules import ScheduleTable, extract
from .tensor import Tensor, mse


def q_sample(schedule: ScheduleTable, x0: np.ndarray, t, noise: np.ndarray) -> np.ndarray:
    """Jump straight from x0 to the noised state at step t.

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise. The noise is passed in
    explicitly so callers control (and tests can replay) the randomness.
    """
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if x0.shape != noise.shape:
        raise ValueError(f"x0 shape {x0.shape} != noise shape {noise.shape}")
    signal = extract(schedule.sqrt_alphas_cumprod, t, x0.ndim, dtype=x0.dtype)
    noisiness = extract(schedule.sqrt_one_minus_alphas_cumprod, t, x0.ndim, dtype=x0.dtype)
    return signal * x0 + noisiness * noise


def predict_x0_from_noise(schedule: ScheduleTable, xt: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """Invert q_sample given the noise estimate; no clamping happens here."""
    xt = np.asarray(xt)
    eps = np.asarray(eps)
    if xt.shape != eps.shape:
        raise ValueError(f"xt shape {xt.shape} != eps shape {eps.shape}")
    recip = extract(schedule.sqrt_recip_alphas_cumprod, t, xt.ndim, dtype=xt.dtype)
    recipm1 = extract(schedule.sqrt_recipm1_alphas_cumprod, t, xt.ndim, dtype=xt.dtype)
    return recip * xt - recipm1 * eps


def sample_timesteps(rng: Rng, n: int, timesteps: int) -> np.ndarray:
    """Training timesteps: i.i.d. uniform over [0, timesteps), no ordering."""
    return rng.randint(0, timesteps, n)


def train_loss(schedule: ScheduleTable, model, x0: np.ndarray, t, rng: Rng, label=None) -> Tensor:
    """MSE between the injected noise and the model's prediction of it.

    Draws eps from rng, forms x_t via q_sample, and returns a scalar Tensor
    differentiable with respect to the model parameters.
    """
    x0 = np.asarray(x0)
    noise = rng.standard_normal(x0.shape).astype(x0.dtype)
    xt = q_sample(schedule, x0, t, noise)
    eps_hat = model.predict(Tensor(xt), t, label)
    return mse(Tensor(noise), eps_hat)
