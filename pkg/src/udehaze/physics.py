"""Underwater image formation, Beer-Lambert transmission and its inversion.

All functions take NCHW tensors (or arrays) and per-image, per-channel
atmospheric light of shape (N, 3), and are differentiable.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, broadcast_to, clamp, exp, reshape

T_FLOOR = 0.01
BETA_INIT = (0.8, 0.4, 0.2)


def _per_channel(values: Tensor, like_shape) -> Tensor:
    """Expand (3,) or (N, 3) values to an (N, 3, H, W) map."""
    n, c, h, w = like_shape
    if values.ndim == 1:
        values = reshape(values, (1, c, 1, 1))
    else:
        values = reshape(values, (values.shape[0], c, 1, 1))
    return broadcast_to(values, (n, c, h, w))


def transmission(depth, beta, strict: bool = False) -> Tensor:
    """``t_c = exp(-beta_c * depth)`` for a (N, 1, H, W) depth map and 3 coefficients."""
    depth, beta = as_tensor(depth), as_tensor(beta)
    if depth.ndim != 4 or depth.shape[1] != 1:
        raise ValueError(f"depth must have shape (N, 1, H, W), got {depth.shape}")
    if beta.shape != (3,):
        raise ValueError(f"beta must have shape (3,), got {beta.shape}")
    if strict and np.any(beta.data < 0):
        raise ValueError(f"negative attenuation coefficient: {beta.data}")
    n, _, h, w = depth.shape
    d3 = broadcast_to(depth, (n, 3, h, w))
    return exp(-(_per_channel(beta, d3.shape) * d3))


def invert(image, t, atmos, t_floor: float = T_FLOOR) -> Tensor:
    """Radiance estimate ``clamp((I - A(1 - t)) / max(t, t_floor), 0, 1)``.

    The floor only applies to the denominator.
    """
    image, t, atmos = as_tensor(image), as_tensor(t), as_tensor(atmos)
    if image.shape != t.shape:
        raise ValueError(f"image {image.shape} and transmission {t.shape} differ")
    a = _per_channel(atmos, image.shape)
    return clamp((image - a * (1.0 - t)) / clamp(t, t_floor, None), 0.0, 1.0)


def forward_model(radiance, t, atmos) -> Tensor:
    """Observed image ``J * t + A * (1 - t)`` (no clamping)."""
    radiance, t, atmos = as_tensor(radiance), as_tensor(t), as_tensor(atmos)
    if radiance.shape != t.shape:
        raise ValueError(f"radiance {radiance.shape} and transmission {t.shape} differ")
    a = _per_channel(atmos, radiance.shape)
    return radiance * t + a * (1.0 - t)
