"""DDPM noise schedule and forward diffusion."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear beta schedule with cumulative-product alpha bars.

    Timesteps run 1..steps; alpha_bar(0) is defined as 1.
    """

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie strictly in (0, 1)")
        if np.any(np.diff(betas) < 0):
            raise ValueError("betas must be non-decreasing")
        betas.flags.writeable = False
        object.__setattr__(self, "betas", betas)

    @property
    def steps(self):
        return len(self.betas)

    def beta(self, t):
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t):
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(np.cumprod(1.0 - self.betas)[t - 1])

    def _check_t(self, t):
        if not 1 <= t <= self.steps:
            raise ValueError(f"timestep {t} outside 1..{self.steps}")


def make_schedule(steps, beta_start=1e-4, beta_end=0.2) -> DiffusionSchedule:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("require 0 < beta_start <= beta_end < 1")
    return DiffusionSchedule(np.linspace(beta_start, beta_end, steps))


def forward_diffuse(x0, t, noise, sched: DiffusionSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, element-wise."""
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {noise.shape}")
    abar = sched.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def posterior_step(x_t, eps_hat, t, sched: DiffusionSchedule, z=None):
    """DDPM posterior mean plus sqrt(beta_t) noise; z is forced to 0 at t=1."""
    beta = sched.beta(t)
    abar = sched.alpha_bar(t)
    mean = (x_t - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(1.0 - beta)
    if t == 1 or z is None:
        return mean
    return mean + np.sqrt(beta) * z
