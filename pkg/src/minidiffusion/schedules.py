"""Per-timestep diffusion coefficient tables.

Every vector a sampler or the trainer will ever index is precomputed here at
float64 and frozen. Working-precision casts happen only at ``extract`` time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

BETA_START = 0.0003
BETA_END = 0.03
REFERENCE_TIMESTEPS = 1000  # the endpoints above hold exactly at this T

LOG_VARIANCE_FLOOR = 1e-20

CSV_COLUMNS = (
    "t",
    "betas",
    "alphas",
    "alphas_cumprod",
    "alphas_cumprod_prev",
    "sqrt_alphas_cumprod",
    "sqrt_one_minus_alphas_cumprod",
    "sqrt_recip_alphas_cumprod",
    "sqrt_recipm1_alphas_cumprod",
    "posterior_mean_coef1",
    "posterior_mean_coef2",
    "posterior_variance",
    "posterior_log_variance_clipped",
)


class ScheduleError(ValueError):
    """Raised for schedules that violate 0 < beta < 1 or bad parameters."""


def linear_beta_schedule(timesteps: int) -> np.ndarray:
    """Linear betas scaled so the [BETA_START, BETA_END] range holds at T=1000."""
    if timesteps < 2:
        raise ScheduleError(f"need at least 2 timesteps, got {timesteps}")
    scale = REFERENCE_TIMESTEPS / timesteps
    return np.linspace(BETA_START * scale, BETA_END * scale, timesteps, dtype=np.float64)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScheduleTable:
    """All per-timestep coefficients, stored at float64 and immutable."""

    betas: np.ndarray
    alphas: np.ndarray
    alphas_cumprod: np.ndarray
    alphas_cumprod_prev: np.ndarray
    sqrt_alphas_cumprod: np.ndarray
    sqrt_one_minus_alphas_cumprod: np.ndarray
    sqrt_recip_alphas_cumprod: np.ndarray
    sqrt_recipm1_alphas_cumprod: np.ndarray
    posterior_mean_coef1: np.ndarray
    posterior_mean_coef2: np.ndarray
    posterior_variance: np.ndarray
    posterior_log_variance_clipped: np.ndarray

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    @classmethod
    def from_betas(cls, betas) -> "ScheduleTable":
        """Build the full table from a beta vector (any source, e.g. tests)."""
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ScheduleError(f"betas must be a non-empty vector, got shape {betas.shape}")
        if not (np.all(betas > 0.0) and np.all(betas < 1.0)):
            raise ScheduleError(
                f"betas must lie in (0, 1); got range [{betas.min()}, {betas.max()}]"
            )
        alphas = 1.0 - betas
        alphas_cumprod = np.cumprod(alphas)
        alphas_cumprod_prev = np.concatenate([[1.0], alphas_cumprod[:-1]])
        one_minus = 1.0 - alphas_cumprod
        return cls(
            betas=_frozen(betas),
            alphas=_frozen(alphas),
            alphas_cumprod=_frozen(alphas_cumprod),
            alphas_cumprod_prev=_frozen(alphas_cumprod_prev),
            sqrt_alphas_cumprod=_frozen(np.sqrt(alphas_cumprod)),
            sqrt_one_minus_alphas_cumprod=_frozen(np.sqrt(one_minus)),
            sqrt_recip_alphas_cumprod=_frozen(np.sqrt(1.0 / alphas_cumprod)),
            sqrt_recipm1_alphas_cumprod=_frozen(np.sqrt(1.0 / alphas_cumprod - 1.0)),
            posterior_mean_coef1=_frozen(betas * np.sqrt(alphas_cumprod_prev) / one_minus),
            posterior_mean_coef2=_frozen((1.0 - alphas_cumprod_prev) * np.sqrt(alphas) / one_minus),
            posterior_variance=_frozen(betas * (1.0 - alphas_cumprod_prev) / one_minus),
            posterior_log_variance_clipped=_frozen(
                np.log(np.maximum(betas * (1.0 - alphas_cumprod_prev) / one_minus, LOG_VARIANCE_FLOOR))
            ),
        )


def build_schedule(timesteps: int) -> ScheduleTable:
    """The standard linear-beta table for a given number of timesteps."""
    return ScheduleTable.from_betas(linear_beta_schedule(timesteps))


def extract(a: np.ndarray, t, target_rank: int, dtype=np.float32) -> np.ndarray:
    """Gather a[t] per batch entry, shaped (B, 1, ..., 1) for broadcasting.

    ``dtype`` is the working precision of the tensors the result will scale.
    """
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError(f"timestep indices must be integers, got {t.dtype}")
    if t.ndim != 1:
        raise ValueError(f"timestep batch must be 1-d, got shape {t.shape}")
    if target_rank < 1:
        raise ValueError(f"target_rank must be >= 1, got {target_rank}")
    if t.size and (t.min() < 0 or t.max() >= len(a)):
        raise IndexError(f"timestep index out of range [0, {len(a)}): {t.min()}..{t.max()}")
    out = a[t].astype(dtype)
    return out.reshape((len(t),) + (1,) * (target_rank - 1))


def write_schedule_csv(table: ScheduleTable, fileobj) -> None:
    """Dump every column at full float64 precision (round-trippable reprs)."""
    writer = csv.writer(fileobj)
    writer.writerow(CSV_COLUMNS)
    columns = [getattr(table, name) for name in CSV_COLUMNS[1:]]
    for t in range(table.timesteps):
        writer.writerow([t] + [repr(float(col[t])) for col in columns])


# sanity: the CSV layout covers exactly the dataclass fields
assert set(CSV_COLUMNS[1:]) == {f.name for f in fields(ScheduleTable)}
