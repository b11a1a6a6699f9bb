"""PSNR and single-scale SSIM for images in [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import check_image


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0; identical images give ``inf``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@lru_cache(maxsize=4)
def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable filtering keeping only windows fully inside the image."""
    k = g.size
    rows = sliding_window_view(x, k, axis=1) @ g
    return sliding_window_view(rows, k, axis=0) @ g


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over valid window positions, computed per channel and averaged."""
    a, b = check_image(a), check_image(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    h, w, _ = a.shape
    if h < window or w < window:
        raise ValueError(f"ssim: image {h}x{w} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    scores = []
    for c in range(3):
        x, y = a[:, :, c], b[:, :, c]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


@dataclass
class MetricsReport:
    ids: List[str] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)

    def add(self, sample_id: str, out: np.ndarray, ref: np.ndarray) -> None:
        self.ids.append(sample_id)
        self.psnr.append(psnr(out, ref))
        self.ssim.append(ssim(out, ref))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def to_dict(self) -> dict:
        return {
            "mean_psnr": _json_float(self.mean_psnr),
            "mean_ssim": _json_float(self.mean_ssim),
            "count": len(self.ids),
            "per_image": [{"id": i, "psnr": _json_float(p), "ssim": s}
                          for i, p, s in zip(self.ids, self.psnr, self.ssim)],
        }


def _json_float(v: float):
    # JSON has no infinity literal
    return "inf" if v == math.inf else v
