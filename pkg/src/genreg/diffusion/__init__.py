from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    PROMPT_COUPLED,
    PROMPT_INDEPENDENT,
    Denoiser,
    coupled_attention,
    self_attention,
)
from .ops import (
    SgdOptimizer,
    denoise_independent,
    denoise_step,
    diffusion_loss,
    encode_condition,
    sample,
    train_autoencoder_step,
    train_step,
)
from .schedule import DiffusionSchedule, forward_diffuse, make_schedule, posterior_step

__all__ = [
    "PROMPT_COUPLED",
    "PROMPT_INDEPENDENT",
    "Denoiser",
    "DiffusionSchedule",
    "SgdOptimizer",
    "coupled_attention",
    "denoise_independent",
    "denoise_step",
    "diffusion_loss",
    "encode_condition",
    "forward_diffuse",
    "load_checkpoint",
    "make_schedule",
    "posterior_step",
    "sample",
    "save_checkpoint",
    "self_attention",
    "train_autoencoder_step",
    "train_step",
]
