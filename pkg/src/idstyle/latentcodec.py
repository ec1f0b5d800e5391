"""Toy invertible image <-> latent codec.

Latents live in [-1, 1] via the affine map ``2 * pixel - 1`` and use the
``(channels, height, width)`` layout.  ``pool`` mode additionally
block-averages by an integer factor on encode and nearest-neighbor
upsamples on decode, so guidance can run on smaller tensors; encode is
an exact right inverse of decode there.  Decode clamps to [0, 1]
because guided sampling may overshoot slightly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .guidance import Latent
from .imageio import Image, validate_image

CODEC_MODES = ("identity", "pool")


@dataclass(frozen=True)
class CodecConfig:
    mode: str = "identity"
    factor: int = 8

    def __post_init__(self):
        if self.mode not in CODEC_MODES:
            raise ParameterError(f"unknown codec mode {self.mode!r}")
        if self.factor < 1:
            raise ParameterError(f"pool factor must be >= 1, got {self.factor}")


def _block_mean_axis(arr: Latent, axis: int, factor: int) -> Latent:
    """Mean over groups of ``factor`` along ``axis``, reducing by pair
    averaging while the group size is even.  For power-of-two factors
    this is exact on constant blocks, which is what makes pool-mode
    encode an exact right inverse of decode."""
    moved = np.moveaxis(arr, axis, -1)
    moved = moved.reshape(*moved.shape[:-1], moved.shape[-1] // factor, factor)
    while factor % 2 == 0:
        moved = 0.5 * (moved[..., 0::2] + moved[..., 1::2])
        factor //= 2
    moved = moved[..., 0] if factor == 1 else moved.mean(axis=-1)
    return np.moveaxis(moved, -1, axis)


def encode(img: Image, cfg: CodecConfig = CodecConfig()) -> Latent:
    img = validate_image(img)
    scaled = 2.0 * img - 1.0
    lat = np.moveaxis(scaled, 2, 0)  # (h, w, c) -> (c, h, w)
    if cfg.mode == "identity":
        return lat
    c, h, w = lat.shape
    f = cfg.factor
    if h % f or w % f:
        raise ShapeError(
            f"pool factor {f} does not divide image dims {w}x{h}")
    return _block_mean_axis(_block_mean_axis(lat, 1, f), 2, f)


def decode(z: Latent, cfg: CodecConfig = CodecConfig()) -> Image:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeError(f"latent must have shape (c, h, w), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ParameterError("latent contains non-finite values")
    if cfg.mode == "pool":
        z = z.repeat(cfg.factor, axis=1).repeat(cfg.factor, axis=2)
    img = np.moveaxis((z + 1.0) / 2.0, 0, 2)
    return np.clip(img, 0.0, 1.0)
