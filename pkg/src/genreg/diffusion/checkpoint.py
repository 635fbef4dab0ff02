"""Model checkpoints: "GRDM" binary with named float32 parameter blocks.

Blocks cover model parameters, optimizer momentum buffers (prefix
"momentum.") and scalar metadata (prefix "meta."), so a resumed run
continues bit-identically.
"""

import os
import struct

import numpy as np
import torch

MAGIC = b"GRDM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_block(f, name, arr):
    name_b = name.encode("utf-8")
    f.write(struct.pack("<I", len(name_b)))
    f.write(name_b)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())


def save_blocks(blocks, path):
    """Atomic write (temp file + rename) of name -> float32 array blocks."""
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blocks)))
        for name in blocks:
            _write_block(f, name, blocks[name])
    os.replace(tmp, path)


def load_blocks(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    blocks = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", raw[pos:pos + 4])
        pos += 4
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack("<I", raw[pos:pos + 4])
        pos += 4
        shape = struct.unpack(f"<{ndim}I", raw[pos:pos + 4 * ndim])
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw[pos:pos + 4 * size], dtype="<f4")
        if len(arr) != size:
            raise CheckpointError(f"{path}: truncated payload for block {name!r}")
        pos += 4 * size
        blocks[name] = arr.reshape(shape).copy()
    return blocks


def save_checkpoint(denoiser, optimizer, step, path):
    blocks = {}
    blocks["meta.image_size"] = np.array([denoiser.image_size], dtype=np.float32)
    blocks["meta.latent_channels"] = np.array([denoiser.latent_channels], dtype=np.float32)
    blocks["meta.base_width"] = np.array([denoiser.base_width], dtype=np.float32)
    blocks["meta.seed"] = np.array([denoiser.seed], dtype=np.float32)
    blocks["meta.step"] = np.array([step], dtype=np.float32)
    for name, p in denoiser.params.items():
        blocks[name] = p.detach().cpu().numpy()
    if optimizer is not None:
        for name, v in optimizer.velocity.items():
            blocks["momentum." + name] = v.detach().cpu().numpy()
    save_blocks(blocks, path)


def load_checkpoint(path):
    """Returns (denoiser, momentum blocks, step)."""
    from .model import Denoiser

    blocks = load_blocks(path)
    for key in ("meta.image_size", "meta.latent_channels", "meta.base_width", "meta.seed",
                "meta.step"):
        if key not in blocks:
            raise CheckpointError(f"{path}: missing block {key!r}")
    denoiser = Denoiser(
        image_size=int(blocks["meta.image_size"][0]),
        latent_channels=int(blocks["meta.latent_channels"][0]),
        base_width=int(blocks["meta.base_width"][0]),
        seed=int(blocks["meta.seed"][0]),
    )
    for name, p in denoiser.params.items():
        if name not in blocks:
            raise CheckpointError(f"{path}: missing parameter block {name!r}")
        if tuple(blocks[name].shape) != tuple(p.shape):
            raise CheckpointError(f"{path}: shape mismatch for {name!r}")
        with torch.no_grad():
            p.copy_(torch.from_numpy(blocks[name]))
    momentum = {
        name[len("momentum."):]: torch.from_numpy(arr)
        for name, arr in blocks.items() if name.startswith("momentum.")
    }
    return denoiser, momentum, int(blocks["meta.step"][0])
