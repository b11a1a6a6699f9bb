"""Classical per-channel atmospheric light estimators and their fixed fusion.

Three estimators, each returning one value per colour channel:

* brightest-pixel mean (per channel, top fraction of pixels),
* dark-channel-ranked mean (pixels with the highest eroded dark channel),
* mean colour of the lowest-variance patch on a non-overlapping grid.

The fused prior is ``alpha[0]*perc + alpha[1]*dcp + alpha[2]*blur``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from . import kernels
from .data import check_image


@dataclass(frozen=True)
class PriorConfig:
    alpha: Tuple[float, float, float] = (0.5, 0.3, 0.2)
    top_fraction: float = 0.001
    dcp_window: int = 15
    patch_size: int = 32
    dcp_top_fraction: float = 0.001

    def __post_init__(self):
        if len(self.alpha) != 3 or abs(sum(self.alpha) - 1.0) > 1e-12:
            raise ValueError(f"alpha must be three weights summing to 1, got {self.alpha}")
        for name in ("top_fraction", "dcp_top_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.dcp_window < 1 or self.dcp_window % 2 == 0:
            raise ValueError(f"dcp_window must be odd and >= 1, got {self.dcp_window}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")


@dataclass
class AtmosphericLight:
    """Prior components per channel; ``A`` is filled in once the learned residual is applied."""

    A_perc: np.ndarray
    A_dcp: np.ndarray
    A_blur: np.ndarray
    A_cl: np.ndarray
    A: np.ndarray = None

    def to_dict(self) -> dict:
        return {k: (None if v is None else [float(x) for x in v]) for k, v in asdict(self).items()}


def top_count(fraction: float, n: int) -> int:
    return max(1, int(np.floor(fraction * n)))


def estimate_percentile(img: np.ndarray, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    img = check_image(img)
    flat = img.reshape(-1, 3)
    k = top_count(cfg.top_fraction, flat.shape[0])
    top = np.sort(flat, axis=0, kind="stable")[-k:]
    return np.ascontiguousarray(top).sum(axis=0) / k


def dark_channel(img: np.ndarray, window: int = 15) -> np.ndarray:
    """Per-pixel minimum over channels and a ``window`` square (replicated border)."""
    return kernels.min_filter2d(np.ascontiguousarray(img.min(axis=2)), window)


def estimate_dcp(img: np.ndarray, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    img = check_image(img)
    h, w, _ = img.shape
    if h < cfg.dcp_window or w < cfg.dcp_window:
        raise ValueError(f"image {h}x{w} is smaller than the {cfg.dcp_window}x{cfg.dcp_window} dark-channel window")
    dark = dark_channel(img, cfg.dcp_window).ravel()
    k = top_count(cfg.dcp_top_fraction, dark.size)
    # stable sort on the negated key: ties keep row-major order
    chosen = np.argsort(-dark, kind="stable")[:k]
    return np.ascontiguousarray(img.reshape(-1, 3)[chosen]).sum(axis=0) / k


def estimate_blur(img: np.ndarray, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    img = check_image(img)
    p = cfg.patch_size
    h, w, _ = img.shape
    if h < p or w < p:
        raise ValueError(f"image {h}x{w} is smaller than the {p}x{p} patch")
    nh, nw = h // p, w // p
    tiles = img[:nh * p, :nw * p].reshape(nh, p, nw, p, 3).transpose(0, 2, 1, 3, 4).reshape(nh * nw, p * p, 3)
    means = tiles.mean(axis=1)
    variance = ((tiles - means[:, None, :]) ** 2).mean(axis=1).sum(axis=1)
    return means[int(np.argmin(variance))].copy()


def fuse_classical(img: np.ndarray, cfg: PriorConfig = PriorConfig()) -> AtmosphericLight:
    perc = estimate_percentile(img, cfg)
    dcp = estimate_dcp(img, cfg)
    blur = estimate_blur(img, cfg)
    a1, a2, a3 = cfg.alpha
    return AtmosphericLight(perc, dcp, blur, a1 * perc + a2 * dcp + a3 * blur)
