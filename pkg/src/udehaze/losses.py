"""The five training losses and their weighted total.

Image-domain L1 terms are means over elements so the weights do not
depend on resolution. For a batch, every term is the mean of the
per-sample values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Dict, Optional, Tuple

from . import physics
from .tensor import Tensor, abs_, as_tensor, blockwise_dct, l1_distance, mean, relu, reshape, sum_

TERMS = ("l1", "dct", "fwd", "a_reg", "beta_reg")

@dataclass(frozen=True)
class LossConfig:
    lambdas: Tuple[float, float, float, float, float] = (1.5, 0.8, 0.5, 0.1, 0.1)
    dct_patch_sizes: Tuple[int, ...] = (8, 16, 32)
    dct_weights: Tuple[float, ...] = (0.1, 0.8, 1.0)
    mu: Tuple[float, float] = (0.2, 0.1)
    nu: Tuple[float, float] = (0.1, 0.1)
    eps_margin: float = 0.01
    beta_bounds: Tuple[float, float] = (0.05, 2.0)

    def __post_init__(self):
        if len(self.lambdas) != 5 or min(self.lambdas) < 0:
            raise ValueError(f"need five non-negative loss weights, got {self.lambdas}")
        if len(self.dct_patch_sizes) != len(self.dct_weights) or min(self.dct_weights) < 0:
            raise ValueError("DCT patch sizes and weights must pair up and be non-negative")

    def weight(self, term: str) -> float:
        return self.lambdas[TERMS.index(term)]

    def without(self, term: str) -> "LossConfig":
        """Same config with one term's weight set to zero."""
        if term not in TERMS:
            raise ValueError(f"unknown loss term {term!r}; choose from {', '.join(TERMS)}")
        lambdas = list(self.lambdas)
        lambdas[TERMS.index(term)] = 0.0
        return replace(self, lambdas=tuple(lambdas))

@dataclass
class LossBreakdown:
    l1: float
    dct: float
    fwd: float
    a_reg: float
    beta_reg: float
    total: float
    lambdas: Tuple[float, ...]
    total_tensor: Optional[Tensor] = None

    def as_dict(self) -> Dict[str, float]:
        d = asdict(self)
        d.pop("total_tensor")
        d["lambdas"] = list(self.lambdas)
        return d

def loss_l1(j, j_gt) -> Tensor:
    return l1_distance(as_tensor(j), as_tensor(j_gt))

def dct_scale_term(diff: Tensor, n: int) -> Tensor:
    """Mean over tiles and channels of the per-tile L1 norm of DCT coefficients."""
    coeffs = blockwise_dct(diff, n)
    # mean over all coefficients times n*n = mean over tiles of the per-tile sum
    return mean(abs_(coeffs)) * float(n * n)

def loss_dct(j, j_gt, cfg: LossConfig = LossConfig()) -> Tensor:
    j, j_gt = as_tensor(j), as_tensor(j_gt)
    if j.shape != j_gt.shape:
        raise ValueError(f"loss_dct: shape mismatch {j.shape} vs {j_gt.shape}")
    _, _, h, w = j.shape
    for n in cfg.dct_patch_sizes:
        if h % n or w % n:
            raise ValueError(f"loss_dct: image {h}x{w} is not divisible by patch size {n}")
    diff = j - j_gt
    total = None
    for n, weight in zip(cfg.dct_patch_sizes, cfg.dct_weights):
        term = dct_scale_term(diff, n) * weight
        total = term if total is None else total + term
    return total

def loss_fwd(image, j, t, atmos) -> Tensor:
    return l1_distance(physics.forward_model(j, t, atmos), as_tensor(image))

def loss_a_reg(atmos, a_cl, image_mean, cfg: LossConfig = LossConfig()) -> Tensor:
    """Anchor to the prior, blue >= green >= red ordering, and brightness floor.

    All inputs are (N, 3) or (3,); the result is the batch mean.
    """
    atmos = _as_batch(as_tensor(atmos))
    a_cl = _as_batch(as_tensor(a_cl))
    image_mean = _as_batch(as_tensor(image_mean))
    if not (atmos.shape == a_cl.shape == image_mean.shape) or atmos.shape[1] != 3:
        raise ValueError(f"loss_a_reg: expected matching (N, 3) inputs, got {atmos.shape}, "
                         f"{a_cl.shape}, {image_mean.shape}")
    eps = cfg.eps_margin
    mu1, mu2 = cfg.mu
    anchor = mean(abs_(atmos - a_cl), axis=1)
    a_r, a_g, a_b = atmos[:, 0], atmos[:, 1], atmos[:, 2]
    ordering = relu(a_r - a_g + eps) + relu(a_g - a_b + eps)
    brightness = sum_(relu(image_mean - atmos), axis=1)
    return mean(anchor + mu1 * ordering + mu2 * brightness)

def _as_batch(x: Tensor) -> Tensor:
    return reshape(x, (1, x.shape[0])) if x.ndim == 1 else x

def loss_beta_reg(beta, cfg: LossConfig = LossConfig()) -> Tensor:
    beta = as_tensor(beta)
    if beta.shape != (3,):
        raise ValueError(f"beta must have shape (3,), got {beta.shape}")
    eps = cfg.eps_margin
    b_min, b_max = cfg.beta_bounds
    nu1, nu2 = cfg.nu
    b_r, b_g, b_b = beta[0], beta[1], beta[2]
    ordering = relu(b_g - b_r + eps) + relu(b_b - b_g + eps)
    return ordering + nu1 * sum_(relu(beta - b_max)) + nu2 * sum_(relu(b_min - beta))

def loss_total(terms: Dict[str, Tensor], cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Weighted sum of the five terms; zero-weight terms still get recorded."""
    total = None
    for name, lam in zip(TERMS, cfg.lambdas):
        part = as_tensor(terms[name]) * lam
        total = part if total is None else total + part
    values = {name: float(as_tensor(terms[name]).data) for name in TERMS}
    return LossBreakdown(**values, total=float(total.data), lambdas=tuple(cfg.lambdas),
                         total_tensor=total)

def compute_losses(outputs, image, reference, beta, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """All five terms for one forward pass of the model."""
    image, reference = as_tensor(image), as_tensor(reference)
    image_mean = image.data.mean(axis=(2, 3))
    terms = {
        "l1": loss_l1(outputs.J, reference),
        "dct": loss_dct(outputs.J, reference, cfg),
        "fwd": loss_fwd(image, outputs.J, outputs.t, outputs.A),
        "a_reg": loss_a_reg(outputs.A, outputs.A_cl, image_mean, cfg),
        "beta_reg": loss_beta_reg(beta, cfg),
    }
    return loss_total(terms, cfg)
