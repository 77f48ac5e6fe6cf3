"""Self-contained pixel-space diffusion engine.

DDPM training, DDPM/DDIM sampling and classifier-free label conditioning on
top of a scratch-built tensor/autodiff core. Nothing here needs a GPU or a
deep-learning framework; numpy supplies the dense-array arithmetic.
"""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .datasets import DataFormatError, DatasetHandle, load_dataset
from .ddim import DdimPlan, build_plan, ddim_sample_loop, ddim_step
from .ddpm import PosteriorMoments, p_mean_variance, p_sample, q_posterior, sample_loop
from .forward import predict_x0_from_noise, q_sample, sample_timesteps, train_loss
from .imaging import write_image_grid, write_trajectory_grid
from .rng import Rng
from .schedules import ScheduleError, ScheduleTable, build_schedule, extract, linear_beta_schedule
from .tensor import Tensor, no_grad, randn
from .trainer import Adam, TrainConfig, TrainingDiverged, train
from .unet import GuidanceConfig, UNet, UNetConfig, guided_predict, timestep_embedding

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Checkpoint",
    "CheckpointError",
    "DataFormatError",
    "DatasetHandle",
    "DdimPlan",
    "GuidanceConfig",
    "PosteriorMoments",
    "Rng",
    "ScheduleError",
    "ScheduleTable",
    "Tensor",
    "TrainConfig",
    "TrainingDiverged",
    "UNet",
    "UNetConfig",
    "build_plan",
    "build_schedule",
    "ddim_sample_loop",
    "ddim_step",
    "extract",
    "guided_predict",
    "linear_beta_schedule",
    "load_checkpoint",
    "load_dataset",
    "no_grad",
    "p_mean_variance",
    "p_sample",
    "predict_x0_from_noise",
    "q_posterior",
    "q_sample",
    "randn",
    "sample_loop",
    "sample_timesteps",
    "save_checkpoint",
    "timestep_embedding",
    "train",
    "train_loss",
    "write_image_grid",
    "write_trajectory_grid",
]
