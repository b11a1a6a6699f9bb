"""Training loop, evaluation and loss ablations."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import PairedSample, images_to_nchw, load_dataset_root, nchw_to_images
from .losses import TERMS, LossBreakdown, LossConfig, compute_losses
from .metrics import MetricsReport
from .nets import ModelConfig, UDehazeNet, save_checkpoint
from .optim import AdamW

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    resize: int = 128
    seed: int = 0
    val_fraction: float = 0.1
    base_channels: int = 16
    lambdas: Tuple[float, float, float, float, float] = LossConfig().lambdas
    max_steps: Optional[int] = None
    data_root: Optional[str] = None
    out_dir: Optional[str] = None
    drop_term: Optional[str] = None

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.val_fraction <= 0.5:
            raise ValueError(f"val_fraction must lie in (0, 0.5], got {self.val_fraction}")
        if self.drop_term is not None and self.drop_term not in TERMS:
            raise ValueError(f"unknown loss term {self.drop_term!r}; choose from {', '.join(TERMS)}")

    def loss_config(self) -> LossConfig:
        cfg = LossConfig(lambdas=self.lambdas)
        return cfg.without(self.drop_term) if self.drop_term else cfg

    def model_config(self) -> ModelConfig:
        return ModelConfig(base_channels=self.base_channels, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Checkpoint:
    model: UDehazeNet
    config: TrainConfig
    epoch: int
    val_psnr: float
    val_ssim: float

    def meta(self) -> dict:
        return {"train_config": self.config.to_dict(), "epoch": self.epoch,
                "val_psnr": self.val_psnr, "val_ssim": self.val_ssim}

    def save(self, path) -> None:
        save_checkpoint(self.model, path, self.meta())


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    log: List[dict] = field(default_factory=list)


def split_train_val(samples: Sequence[PairedSample], val_fraction: float):
    """The last ``val_fraction`` of the (already name-sorted) samples validate."""
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split train/validation, got {n}")
    n_val = min(n - 1, max(1, int(math.ceil(val_fraction * n))))
    return list(samples[:n - n_val]), list(samples[n - n_val:])


def _snapshot(model: UDehazeNet) -> UDehazeNet:
    copy = UDehazeNet(model.cfg)
    copy.load_state_dict(model.state_dict())
    return copy


def enhance_batch(model: UDehazeNet, images: Sequence[np.ndarray], a_cl=None, batch_size: int = 16):
    """Run the model on HWC images and return the enhanced HWC images."""
    outs = []
    for start in range(0, len(images), batch_size):
        chunk = images_to_nchw(images[start:start + batch_size])
        prior = None if a_cl is None else a_cl[start:start + batch_size]
        outs.extend(nchw_to_images(model(chunk, a_cl=prior).J.data))
    return outs


def evaluate(model, samples: Sequence[PairedSample], oracle=None, batch_size: int = 16) -> MetricsReport:
    """PSNR/SSIM of the model's output against each sample's reference.

    ``model=None`` scores the raw inputs. ``oracle`` is an optional list of
    ``(t, A)`` pairs (t as (3, H, W), A as (3,)) replacing the predictions.
    """
    if isinstance(model, Checkpoint):
        model = model.model
    report = MetricsReport()
    if model is None:
        for s in samples:
            report.add(s.id, s.input, s.reference)
        return report
    if oracle is not None:
        for s, (t, a) in zip(samples, oracle):
            out = model(images_to_nchw([s.input]), t_override=np.asarray(t)[None],
                        atmos_override=np.asarray(a)[None])
            report.add(s.id, nchw_to_images(out.J.data)[0], s.reference)
        return report
    outs = enhance_batch(model, [s.input for s in samples], batch_size=batch_size)
    for s, out in zip(samples, outs):
        report.add(s.id, out, s.reference)
    return report


def _check_finite(breakdown: LossBreakdown) -> None:
    for name in TERMS + ("total",):
        if not math.isfinite(getattr(breakdown, name)):
            raise FloatingPointError(f"loss term {name!r} became non-finite ({getattr(breakdown, name)})")


def train(config: TrainConfig, train_samples: Optional[Sequence[PairedSample]] = None,
          val_samples: Optional[Sequence[PairedSample]] = None, log_path=None) -> TrainResult:
    """Train from scratch; returns the best-by-validation-PSNR and last checkpoints.

    Samples default to ``config.data_root`` (split by ``val_fraction``).
    When ``config.out_dir`` is set, ``best.ckpt``, ``last.ckpt`` and
    ``train_log.jsonl`` are written there.
    """
    if train_samples is None:
        if config.data_root is None:
            raise ValueError("no training data: pass samples or set data_root")
        train_samples = load_dataset_root(config.data_root, (config.resize, config.resize))
    if val_samples is None:
        train_samples, val_samples = split_train_val(train_samples, config.val_fraction)
    if not train_samples or not val_samples:
        raise ValueError("training and validation sets must both be non-empty")

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out_dir / "train_log.jsonl"
    log_file = open(log_path, "w") if log_path else None

    loss_cfg = config.loss_config()
    model = UDehazeNet(config.model_config())
    optimizer = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)

    inputs = images_to_nchw([s.input for s in train_samples])
    refs = images_to_nchw([s.reference for s in train_samples])
    a_cl = model.classical_prior(inputs)
    batch = min(config.batch_size, len(train_samples))
    n_batches = len(train_samples) // batch

    def validate(epoch, extra):
        report = evaluate(model, val_samples, batch_size=config.batch_size)
        record = {"epoch": epoch, "config": label, **extra, "val_psnr": report.mean_psnr,
                  "val_ssim": report.mean_ssim, "wall_time": time.perf_counter() - started}
        log.append(record)
        if log_file:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
        return report

    label = f"w/o {config.drop_term}" if config.drop_term else "full"
    log: List[dict] = []
    started = time.perf_counter()
    try:
        report = validate(0, {"steps": 0})
        best = Checkpoint(_snapshot(model), config, 0, report.mean_psnr, report.mean_ssim)
        step = 0
        epoch = 0
        while epoch < config.epochs and (config.max_steps is None or step < config.max_steps):
            epoch += 1
            order = rng.permutation(len(train_samples))
            sums = dict.fromkeys(TERMS + ("total",), 0.0)
            done = 0
            for b in range(n_batches):
                if config.max_steps is not None and step >= config.max_steps:
                    break
                idx = order[b * batch:(b + 1) * batch]
                out = model(inputs[idx], a_cl=a_cl[idx])
                breakdown = compute_losses(out, inputs[idx], refs[idx], model.beta, loss_cfg)
                _check_finite(breakdown)
                breakdown.total_tensor.backward()
                optimizer.step()
                optimizer.zero_grad()
                step += 1
                done += 1
                for k in sums:
                    sums[k] += getattr(breakdown, k)
            means = {k: v / max(done, 1) for k, v in sums.items()}
            report = validate(epoch, {"steps": step, "lambdas": list(loss_cfg.lambdas),
                                      **{f"loss_{k}": v for k, v in means.items()},
                                      "beta": model.beta.data.tolist()})
            logger.info("epoch %d step %d loss %.4f val_psnr %.3f", epoch, step, means["total"],
                        report.mean_psnr)
            if report.mean_psnr > best.val_psnr:
                best = Checkpoint(_snapshot(model), config, epoch, report.mean_psnr, report.mean_ssim)
    finally:
        if log_file:
            log_file.close()

    last = Checkpoint(_snapshot(model), config, epoch, log[-1]["val_psnr"], log[-1]["val_ssim"])
    if out_dir is not None:
        best.save(out_dir / "best.ckpt")
        last.save(out_dir / "last.ckpt")
    return TrainResult(best, last, log)


def ablate(config: TrainConfig, drop_term: str, **kwargs) -> TrainResult:
    """Train with one loss weight set to zero."""
    if drop_term not in TERMS:
        raise ValueError(f"unknown loss term {drop_term!r}; choose from {', '.join(TERMS)}")
    return train(replace(config, drop_term=drop_term), **kwargs)
