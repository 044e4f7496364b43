"""DDPM forward-process coefficients and timestep utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DEFAULT_NUM_STEPS = 1000
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep coefficients of the variance-preserving forward process.

    ``alpha_t[t] = sqrt(alpha_bar[t])`` and ``sigma_t[t] = sqrt(1 - alpha_bar[t])``
    so ``z_t = alpha_t * v + sigma_t * eps``. Arrays are read-only.
    """

    betas: np.ndarray
    alpha_bar: np.ndarray
    alpha_t: np.ndarray
    sigma_t: np.ndarray

    @property
    def num_steps(self) -> int:
        return int(self.betas.shape[0])

    @classmethod
    def from_betas(cls, betas) -> NoiseSchedule:
        betas = np.array(betas, dtype=np.float64).reshape(-1)
        if betas.size < 1:
            raise ConfigError("schedule needs at least one step")
        if not np.all((betas > 0.0) & (betas < 1.0)):
            raise ConfigError("every beta must lie strictly inside (0, 1)")
        alpha_bar = np.cumprod(1.0 - betas)
        arrays = [betas, alpha_bar, np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar)]
        for a in arrays:
            a.setflags(write=False)
        return cls(*arrays)

    def check_index(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.num_steps:
            raise ValueError(f"timestep {t} outside schedule of {self.num_steps} steps")
        return t

    def coefficients(self, t: int) -> tuple[float, float]:
        """Return ``(alpha_t, sigma_t)`` at integer step ``t``."""
        t = self.check_index(t)
        return float(self.alpha_t[t]), float(self.sigma_t[t])


@dataclass(frozen=True)
class TimestepRange:
    """Inclusive bounds for the random timestep drawn each optimization step."""

    t_min: int = 20
    t_max: int = 980

    def validate(self, num_steps: int) -> TimestepRange:
        if not 0 <= self.t_min <= self.t_max < num_steps:
            raise ConfigError(
                f"timestep range [{self.t_min}, {self.t_max}] invalid for {num_steps} steps"
            )
        return self


def build_linear_schedule(
    num_steps: int = DEFAULT_NUM_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    interpolation: str = "scaled-linear",
) -> NoiseSchedule:
    """Build a linear beta schedule.

    Args:
        num_steps: number of discrete timesteps T.
        beta_start: beta at t = 0.
        beta_end: beta at t = T - 1.
        interpolation: ``"scaled-linear"`` interpolates linearly in sqrt(beta)
            (the latent diffusion default); ``"linear"`` interpolates beta itself.

    Raises:
        ConfigError: on out-of-range bounds or an unknown interpolation.
    """
    if int(num_steps) != num_steps or num_steps < 1:
        raise ConfigError(f"num_steps must be a positive integer, got {num_steps!r}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start!r}, {beta_end!r}"
        )
    if interpolation == "scaled-linear":
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), int(num_steps)) ** 2
    elif interpolation == "linear":
        betas = np.linspace(beta_start, beta_end, int(num_steps))
    else:
        raise ConfigError(f"unknown interpolation {interpolation!r}")
    return NoiseSchedule.from_betas(betas)


def sample_timestep(rng: np.random.Generator, trange: TimestepRange) -> int:
    """Draw an integer timestep uniformly from ``[t_min, t_max]``."""
    return int(rng.integers(trange.t_min, trange.t_max + 1))


def perturb(v: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Forward-diffuse ``v`` to step ``t``: ``alpha_t * v + sigma_t * eps``."""
    v = np.asarray(v)
    eps = np.asarray(eps)
    if v.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match latent shape {v.shape}")
    a, s = schedule.coefficients(t)
    return a * v + s * eps
