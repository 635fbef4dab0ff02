"""Toy latent diffusion denoiser with coupled self-attention and a
zero-initialized depth-condition branch.

Layout conventions:
  - a coupled latent is a numpy array of shape (2*H', W', C); the two
    vertically stacked halves are processed with the half axis treated as
    a batch dimension, so convolutions never mix halves;
  - only the bottleneck self-attention exchanges information across the
    halves (coupled mode), by flattening both halves into one token
    sequence;
  - each query attends over keys ordered own-half-first, which makes
    half-swap equivariance hold bit-exactly;
  - the condition branch ends in a zero-initialized 1x1 convolution, so a
    freshly initialized model ignores its condition entirely.

Prompt modes select one of two learned embeddings: 0 = independent-style
generation, 1 = coupled cross-view-consistent generation.
"""

import math

import numpy as np
import torch

from ..base import seeded_rng
import torch.nn.functional as F

PROMPT_INDEPENDENT = 0
PROMPT_COUPLED = 1
PROMPT_DIM = 16

torch.set_num_threads(1)


def softmax_rows(logits):
    """Numerically stable row softmax (numpy)."""
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def self_attention(tokens, wq, wk, wv):
    """Scaled dot-product self-attention over one token sequence (Eq.-style
    single-head form): softmax(Q K^T / sqrt(d)) V."""
    x = np.asarray(tokens, dtype=np.float64)
    d = x.shape[-1]
    q, k, v = x @ wq, x @ wk, x @ wv
    attn = softmax_rows(q @ k.T / math.sqrt(d))
    return attn @ v


def coupled_attention(top, bottom, wq, wk, wv, return_weights=False):
    """Self-attention over the concatenation of both halves' tokens.

    Keys/values for each query are ordered own-half-first so that swapping
    the halves swaps the outputs exactly. Mathematically identical to
    attention over the plain concatenated sequence.
    """
    top = np.asarray(top, dtype=np.float64)
    bottom = np.asarray(bottom, dtype=np.float64)
    d = top.shape[-1]
    scale = 1.0 / math.sqrt(d)

    def half(q_half, own, other):
        q = q_half @ wq
        k = np.vstack([own @ wk, other @ wk])
        v = np.vstack([own @ wv, other @ wv])
        attn = softmax_rows(q @ k.T * scale)
        return attn @ v, attn

    out_top, w_top = half(top, top, bottom)
    out_bot, w_bot = half(bottom, bottom, top)
    if return_weights:
        return out_top, out_bot, w_top, w_bot
    return out_top, out_bot


def _init_weight(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return torch.from_numpy(rng.uniform(-bound, bound, size=shape)).float()


class _Conv:
    """Plain conv2d with explicitly named parameters."""

    def __init__(self, params, name, c_in, c_out, rng, kernel=3, stride=1, bias=True,
                 zero=False, transpose=False):
        self.stride = stride
        self.kernel = kernel
        self.transpose = transpose
        self.name = name
        shape = (c_in, c_out, kernel, kernel) if transpose else (c_out, c_in, kernel, kernel)
        fan_in = c_in * kernel * kernel
        w = torch.zeros(shape) if zero else _init_weight(rng, shape, fan_in)
        params[name + ".weight"] = w.requires_grad_(True)
        self.bias = bias
        if bias:
            b = torch.zeros(c_out) if zero else _init_weight(rng, (c_out,), fan_in)
            params[name + ".bias"] = b.requires_grad_(True)
        self.params = params

    def __call__(self, x):
        w = self.params[self.name + ".weight"]
        b = self.params[self.name + ".bias"] if self.bias else None
        pad = self.kernel // 2
        if self.transpose:
            return F.conv_transpose2d(x, w, b, stride=self.stride, padding=pad,
                                      output_padding=self.stride - 1)
        return F.conv2d(x, w, b, stride=self.stride, padding=pad)


class _Linear:
    def __init__(self, params, name, d_in, d_out, rng, bias=True, zero=False):
        self.name = name
        w = torch.zeros((d_out, d_in)) if zero else _init_weight(rng, (d_out, d_in), d_in)
        params[name + ".weight"] = w.requires_grad_(True)
        self.bias = bias
        if bias:
            b = torch.zeros(d_out) if zero else _init_weight(rng, (d_out,), d_in)
            params[name + ".bias"] = b.requires_grad_(True)
        self.params = params

    def __call__(self, x):
        b = self.params[self.name + ".bias"] if self.bias else None
        return F.linear(x, self.params[self.name + ".weight"], b)


def _timestep_embedding(t, dim, dtype):
    """Sinusoidal embedding of a (possibly batched) integer timestep."""
    t = torch.as_tensor(t, dtype=dtype).reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=dtype) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class Denoiser:
    """Conv encoder-decoder noise predictor with bottleneck self-attention.

    Works on latents of per-half shape (latent_size, latent_size,
    latent_channels); images are (image_size, image_size, 3) with the
    coupled forms vertically stacked.
    """

    def __init__(self, image_size=64, latent_channels=8, base_width=32, seed=0):
        if image_size % 4 != 0:
            raise ValueError("image_size must be divisible by 4")
        self.image_size = image_size
        self.latent_size = image_size // 4
        self.latent_channels = latent_channels
        self.base_width = base_width
        self.seed = seed
        rng = seeded_rng(seed, 0xD1FF)
        p = {}
        c, w = latent_channels, base_width
        # autoencoder (images <-> latents, 4x spatial reduction, tanh latents)
        self.ae_enc1 = _Conv(p, "ae.enc1", 3, w // 2, rng, stride=2)
        self.ae_enc2 = _Conv(p, "ae.enc2", w // 2, c, rng, stride=2)
        self.ae_dec1 = _Conv(p, "ae.dec1", c, w // 2, rng, stride=2, transpose=True)
        self.ae_dec2 = _Conv(p, "ae.dec2", w // 2, 3, rng, stride=2, transpose=True)
        # denoiser trunk
        self.enc1 = _Conv(p, "denoiser.enc1", c, w, rng)
        self.enc2 = _Conv(p, "denoiser.enc2", w, 2 * w, rng, stride=2)
        self.attn_q = _Linear(p, "denoiser.attn_q", 2 * w, 2 * w, rng, bias=False)
        self.attn_k = _Linear(p, "denoiser.attn_k", 2 * w, 2 * w, rng, bias=False)
        self.attn_v = _Linear(p, "denoiser.attn_v", 2 * w, 2 * w, rng, bias=False)
        self.mid = _Conv(p, "denoiser.mid", 2 * w, 2 * w, rng)
        self.dec1 = _Conv(p, "denoiser.dec1", 2 * w, w, rng, stride=2, transpose=True)
        self.dec2 = _Conv(p, "denoiser.dec2", w, c, rng)
        # timestep / prompt conditioning, injected at the bottleneck
        self.time_proj = _Linear(p, "denoiser.time_proj", 32, 2 * w, rng)
        p["prompt.embedding"] = _init_weight(rng, (2, PROMPT_DIM), PROMPT_DIM).requires_grad_(True)
        self.prompt_proj = _Linear(p, "prompt.proj", PROMPT_DIM, 2 * w, rng)
        # condition branch: depth encoder copy ending in a zero convolution
        self.cond_enc1 = _Conv(p, "condition.enc1", 1, w // 4, rng, stride=2)
        self.cond_enc2 = _Conv(p, "condition.enc2", w // 4, w // 2, rng, stride=2)
        self.cond_zero = _Conv(p, "condition.zero", w // 2, c, rng, kernel=1, zero=True)
        # injection of condition features into the trunk (no bias: zero stays zero)
        self.cond_inject = _Conv(p, "condition.inject", c, w, rng, kernel=1, bias=False)
        self.params = p

    # -- parameter plumbing ------------------------------------------------

    def named_parameters(self):
        return dict(self.params)

    def condition_parameter_names(self):
        return [n for n in self.params if n.startswith("condition.")]

    def to_dtype(self, dtype):
        for name in self.params:
            self.params[name] = self.params[name].detach().to(dtype).requires_grad_(True)
        return self

    # -- autoencoder -------------------------------------------------------

    def encode_image(self, images):
        """(B, 3, H, W) -> (B, C, H/4, W/4), latents in (-1, 1)."""
        h = F.silu(self.ae_enc1(images))
        return torch.tanh(self.ae_enc2(h))

    def decode_latent(self, latents):
        h = F.silu(self.ae_dec1(latents))
        return torch.sigmoid(self.ae_dec2(h))

    # -- condition encoding ------------------------------------------------

    def encode_condition_halves(self, depth_halves):
        """(B, 2, 1, H, W) depth -> (B, 2, C, H/4, W/4) condition features.

        Exactly zero at fresh initialization (zero convolution).
        """
        b = depth_halves.shape[0]
        flat = depth_halves.reshape(b * 2, *depth_halves.shape[2:])
        h = F.silu(self.cond_enc1(flat))
        h = F.silu(self.cond_enc2(h))
        z = self.cond_zero(h)
        return z.reshape(b, 2, *z.shape[1:])

    # -- attention ---------------------------------------------------------

    def _attend(self, feats, coupled):
        """feats: (B, 2, d, h, w); token attention, coupled or per-half."""
        b, two, d, h, w = feats.shape
        tokens = feats.permute(0, 1, 3, 4, 2).reshape(b, 2, h * w, d)
        q = self.attn_q(tokens)
        k = self.attn_k(tokens)
        v = self.attn_v(tokens)
        scale = 1.0 / math.sqrt(d)

        def attend(qh, ks, vs):
            logits = torch.matmul(qh, ks.transpose(-1, -2)) * scale
            return torch.matmul(torch.softmax(logits, dim=-1), vs)

        outs = []
        for half in (0, 1):
            if coupled:
                other = 1 - half
                ks = torch.cat([k[:, half], k[:, other]], dim=1)
                vs = torch.cat([v[:, half], v[:, other]], dim=1)
            else:
                ks, vs = k[:, half], v[:, half]
            outs.append(attend(q[:, half], ks, vs))
        out = torch.stack(outs, dim=1)
        return out.reshape(b, 2, h, w, d).permute(0, 1, 4, 2, 3)

    # -- noise prediction --------------------------------------------------

    def predict_noise(self, latent_halves, t, prompt_mode, cond_halves=None, coupled=True):
        """Forward pass: (B, 2, C, h, w) noisy latents -> predicted noise.

        cond_halves matches the latent shape (output of
        encode_condition_halves); None means unconditional.
        """
        b = latent_halves.shape[0]
        dtype = latent_halves.dtype
        flat = latent_halves.reshape(b * 2, *latent_halves.shape[2:])
        h1 = F.silu(self.enc1(flat))
        if cond_halves is not None:
            cflat = cond_halves.reshape(b * 2, *cond_halves.shape[2:])
            h1 = h1 + self.cond_inject(cflat)
        h2 = F.silu(self.enc2(h1))
        temb = self.time_proj(_timestep_embedding(t, 32, dtype))
        if temb.shape[0] == 1:
            temb = temb.expand(b, -1)
        pvec = self.params["prompt.embedding"][prompt_mode]
        pemb = self.prompt_proj(pvec)
        cond_vec = (temb + pemb)[:, :, None, None]
        h2 = h2 + torch.repeat_interleave(cond_vec, 2, dim=0)
        mid = h2.reshape(b, 2, *h2.shape[1:])
        mid = mid + self._attend(mid, coupled)
        flat = mid.reshape(b * 2, *mid.shape[2:])
        h3 = F.silu(self.mid(flat))
        h4 = F.silu(self.dec1(h3))
        out = self.dec2(h4)
        return out.reshape(b, 2, *out.shape[1:])


# -- numpy-facing helpers -------------------------------------------------

def stacked_to_halves(arr):
    """(2H, W, C) or (2H, W) numpy -> torch (1, 2, C, H, W)."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h2 = arr.shape[0]
    if h2 % 2:
        raise ValueError("stacked height must be even")
    h = h2 // 2
    halves = np.stack([arr[:h], arr[h:]])
    return torch.from_numpy(np.ascontiguousarray(halves.transpose(0, 3, 1, 2)))[None]


def halves_to_stacked(tensor):
    """torch (1, 2, C, H, W) -> numpy (2H, W, C)."""
    arr = tensor.detach().cpu().numpy()[0]
    arr = arr.transpose(0, 2, 3, 1)
    return np.concatenate([arr[0], arr[1]], axis=0)
