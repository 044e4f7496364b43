"""Latent diffusion prior toolkit: score distillation, feature matching and KL regularization
on latent codes, with mock backends for exact verification."""

from .config import RunConfig, preset, resolve
from .errors import (
    BackendError,
    ConfigError,
    DegenerateTimestepError,
    DegenerateVarianceError,
    LatentPriorError,
    LoadError,
    NonFiniteGradientError,
)
from .losses import JacobianMode, PriorWeights, combined_step, fm_loss, kl_loss
from .optimize import RunLog, run_optimization
from .schedule import NoiseSchedule, build_linear_schedule

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "ConfigError",
    "DegenerateTimestepError",
    "DegenerateVarianceError",
    "JacobianMode",
    "LatentPriorError",
    "LoadError",
    "NoiseSchedule",
    "NonFiniteGradientError",
    "PriorWeights",
    "RunConfig",
    "RunLog",
    "build_linear_schedule",
    "combined_step",
    "fm_loss",
    "kl_loss",
    "preset",
    "resolve",
    "run_optimization",
]
