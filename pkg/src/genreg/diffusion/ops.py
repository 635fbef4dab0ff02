"""Spec-level diffusion operations: condition encoding, coupled and
independent denoise steps, full reverse-chain sampling, and training."""

import numpy as np
import torch

from ..base import seeded_rng

from .model import (
    PROMPT_COUPLED,
    PROMPT_INDEPENDENT,
    Denoiser,
    halves_to_stacked,
    stacked_to_halves,
)
from .schedule import DiffusionSchedule, posterior_step


def _dtype(denoiser):
    return next(iter(denoiser.params.values())).dtype


def encode_condition(coupled_depth, denoiser):
    """Coupled depth stack (2H, W) -> condition features (2H', W', C).

    Invalid-depth pixels are already the 0 sentinel; a freshly initialized
    condition branch returns exactly zero.
    """
    stacked = np.asarray(coupled_depth, dtype=np.float64)
    if stacked.shape[0] != 2 * denoiser.image_size or stacked.shape[1] != denoiser.image_size:
        raise ValueError(
            f"depth stack shape {stacked.shape} incompatible with image size "
            f"{denoiser.image_size}"
        )
    halves = stacked_to_halves(stacked).to(_dtype(denoiser))
    with torch.no_grad():
        feats = denoiser.encode_condition_halves(halves)
    return halves_to_stacked(feats)


def _predict_eps(x_t, t, prompt_mode, cond, denoiser, coupled):
    halves = stacked_to_halves(x_t).to(_dtype(denoiser))
    cond_halves = None
    if cond is not None:
        cond_halves = stacked_to_halves(cond).to(_dtype(denoiser))
    with torch.no_grad():
        eps = denoiser.predict_noise(halves, t, prompt_mode, cond_halves, coupled=coupled)
    return halves_to_stacked(eps)


def denoise_step(x_t, t, prompt_mode, cond, denoiser, sched, z=None):
    """One coupled reverse step x_t -> x_{t-1} (DDPM posterior)."""
    eps_hat = _predict_eps(x_t, t, prompt_mode, cond, denoiser, coupled=True)
    return posterior_step(np.asarray(x_t, dtype=np.float64), eps_hat, t, sched, z)


def denoise_independent(x_t_p, x_t_q, t, prompt_mode, cond_p, cond_q, denoiser, sched,
                        z_p=None, z_q=None):
    """Per-half reverse steps with single-half attention sequences."""
    x_t = np.concatenate([x_t_p, x_t_q], axis=0)
    cond = None
    if cond_p is not None and cond_q is not None:
        cond = np.concatenate([cond_p, cond_q], axis=0)
    eps_hat = _predict_eps(x_t, t, prompt_mode, cond, denoiser, coupled=False)
    h = x_t_p.shape[0]
    eps_p, eps_q = eps_hat[:h], eps_hat[h:]
    out_p = posterior_step(np.asarray(x_t_p, dtype=np.float64), eps_p, t, sched, z_p)
    out_q = posterior_step(np.asarray(x_t_q, dtype=np.float64), eps_q, t, sched, z_q)
    return out_p, out_q


def sample(denoiser, sched, prompt_mode, coupled_depth, seed, coupled=True):
    """Full reverse chain from N(0, I), then decode to an RGB image pair.

    Deterministic given the seed. Returns (image_top, image_bottom), each
    (image_size, image_size, 3) in [0, 1].
    """
    rng = seeded_rng(seed, 0x5A3D)
    n = denoiser.latent_size
    c = denoiser.latent_channels
    shape = (2 * n, n, c)
    x = rng.standard_normal(shape)
    cond = encode_condition(coupled_depth, denoiser) if coupled_depth is not None else None
    for t in range(sched.steps, 0, -1):
        z = rng.standard_normal(shape) if t > 1 else None
        if coupled:
            x = denoise_step(x, t, prompt_mode, cond, denoiser, sched, z)
        else:
            half = lambda a: (None, None) if a is None else (a[:n], a[n:])
            cp, cq = half(cond)
            zp, zq = half(z)
            xp, xq = denoise_independent(x[:n], x[n:], t, prompt_mode, cp, cq,
                                         denoiser, sched, zp, zq)
            x = np.concatenate([xp, xq], axis=0)
    halves = stacked_to_halves(x).to(_dtype(denoiser))
    with torch.no_grad():
        imgs = denoiser.decode_latent(halves[0])
    arr = imgs.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return arr[0].astype(np.float64), arr[1].astype(np.float64)


def diffusion_loss(denoiser, sched, images, depths, t_values, noise, prompt_mode):
    """Eps-prediction MSE over a batch of coupled image/depth stacks.

    images: (B, 2H, W, 3); depths: (B, 2H, W); t_values: (B,) ints;
    noise: (B, 2, C, h, w) torch tensor. Differentiable.
    """
    dtype = _dtype(denoiser)
    img_halves = torch.cat([stacked_to_halves(im) for im in images]).to(dtype)
    dep_halves = torch.cat([stacked_to_halves(d) for d in depths]).to(dtype)
    b = img_halves.shape[0]
    with torch.no_grad():
        x0 = denoiser.encode_image(img_halves.reshape(b * 2, *img_halves.shape[2:]))
        x0 = x0.reshape(b, 2, *x0.shape[1:])
    abar = torch.tensor(
        [sched.alpha_bar(int(t)) for t in t_values], dtype=dtype
    )[:, None, None, None, None]
    x_t = torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * noise
    cond = denoiser.encode_condition_halves(dep_halves)
    eps_hat = denoiser.predict_noise(x_t, np.asarray(t_values, dtype=np.float64),
                                     prompt_mode, cond, coupled=True)
    return torch.mean((noise - eps_hat) ** 2)


class SgdOptimizer:
    """Plain SGD with momentum over named parameter tensors."""

    def __init__(self, params, lr=1e-3, momentum=0.9, mask=None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.mask = set(mask) if mask is not None else None
        self.velocity = {
            n: torch.zeros_like(p) for n, p in params.items()
            if self.mask is None or n in self.mask
        }

    def step(self):
        with torch.no_grad():
            for name, vel in self.velocity.items():
                p = self.params[name]
                if p.grad is None:
                    continue
                vel.mul_(self.momentum).add_(p.grad)
                p.sub_(self.lr * vel)

    def zero_grad(self):
        for p in self.params.values():
            if p.grad is not None:
                p.grad = None


def train_step(denoiser, sched, images, depths, optimizer, seed, step,
               prompt_mode=PROMPT_COUPLED, batch_size=8):
    """One deterministic SGD step on the eps-prediction loss.

    Batch indices, timesteps, and noise are all derived from (seed, step),
    so training is resumable and bit-reproducible.
    """
    n = len(images)
    if n == 0:
        raise ValueError("empty training corpus")
    rng = seeded_rng(seed, step)
    idx = rng.integers(0, n, size=min(batch_size, n))
    t_values = rng.integers(1, sched.steps + 1, size=len(idx))
    lat = denoiser.latent_size
    noise_np = rng.standard_normal((len(idx), 2, denoiser.latent_channels, lat, lat))
    noise = torch.from_numpy(noise_np).to(_dtype(denoiser))
    loss = diffusion_loss(
        denoiser, sched,
        [images[i] for i in idx], [depths[i] for i in idx],
        t_values, noise, prompt_mode,
    )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train_autoencoder_step(denoiser, images, optimizer, seed, step, batch_size=8):
    """Reconstruction MSE step for the toy latent autoencoder."""
    n = len(images)
    rng = seeded_rng(seed, step, 0xAE)
    idx = rng.integers(0, n, size=min(batch_size, n))
    dtype = _dtype(denoiser)
    batch = torch.cat([stacked_to_halves(images[i]) for i in idx]).to(dtype)
    b = batch.shape[0]
    flat = batch.reshape(b * 2, *batch.shape[2:])
    recon = denoiser.decode_latent(denoiser.encode_image(flat))
    loss = torch.mean((recon - flat) ** 2)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())
