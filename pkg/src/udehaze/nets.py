"""DepthNet, ANet, RefinerNet and the assembled dehazing model.

Data flow for one batch ``I`` (N, 3, H, W)::

    A_cl  = classical prior of each image (constant, no gradient)
    D     = DepthNet(I)                      in [d_min, d_max]
    t     = exp(-beta * D)                   per channel
    A     = clamp(A_cl + gamma * tanh(ANet(I)), A_min, A_max)
    J_raw = clamp((I - A(1 - t)) / max(t, t_floor), 0, 1)
    J     = clamp(J_raw + tanh(r(J_raw)), 0, 1)
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import physics
from .data import atomic_write_bytes
from .priors import PriorConfig, fuse_classical
from .tensor import (Tensor, broadcast_to, clamp, concat, conv2d, mean, relu, reshape, sigmoid,
                     tanh, upsample_bilinear2x)

CHECKPOINT_MAGIC = b"UDHZ1"


@dataclass
class ModelConfig:
    base_channels: int = 16
    kernel: int = 3
    dilations: Tuple[int, int, int] = (2, 4, 2)
    d_min: float = 0.1
    d_max: float = 10.0
    gamma: float = 0.15
    a_min: float = 0.3
    a_max: float = 1.0
    t_floor: float = physics.T_FLOOR
    refiner_width: int = 16
    depth_init: float = 1.0
    head_weight_scale: float = 0.1
    beta_init: Tuple[float, float, float] = physics.BETA_INIT
    prior: PriorConfig = field(default_factory=PriorConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        prior = d.pop("prior", None)
        for key in ("dilations", "beta_init"):
            if key in d:
                d[key] = tuple(d[key])
        cfg = cls(**d)
        if prior is not None:
            prior = dict(prior)
            prior["alpha"] = tuple(prior["alpha"])
            cfg.prior = PriorConfig(**prior)
        return cfg


class Module:
    """Parameter container; ``parameters()`` order is the checkpoint order."""

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix + name + "."))
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    out.extend(m.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, kernel=3, stride=1, dilation=1, zero_init=False):
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (kernel - 1) // 2
        shape = (c_out, c_in, kernel, kernel)
        if zero_init:
            w = np.zeros(shape)
        else:
            # He-uniform, fan-in
            bound = np.sqrt(6.0 / (c_in * kernel * kernel))
            w = rng.uniform(-bound, bound, size=shape)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class DepthNet(Module):
    """Three stride-2 encoder stages, a dilated bottleneck, and a skip-connected decoder."""

    def __init__(self, cfg: ModelConfig, rng):
        c, k = cfg.base_channels, cfg.kernel
        self.d_min, self.d_max = cfg.d_min, cfg.d_max
        self.enc = [Conv2d(rng, 3, c, k, stride=2),
                    Conv2d(rng, c, 2 * c, k, stride=2),
                    Conv2d(rng, 2 * c, 4 * c, k, stride=2)]
        self.bottleneck = [Conv2d(rng, 4 * c, 4 * c, k, dilation=d) for d in cfg.dilations]
        self.dec = [Conv2d(rng, 4 * c + 2 * c, 2 * c, k),
                    Conv2d(rng, 2 * c + c, c, k),
                    Conv2d(rng, c + 3, c, k)]
        self.head = Conv2d(rng, c, 1, k)
        # start shallow so the first inversions are mild and mostly unclamped
        self.head.weight.data *= cfg.head_weight_scale
        frac = (cfg.depth_init - cfg.d_min) / (cfg.d_max - cfg.d_min)
        self.head.bias.data[:] = np.log(frac / (1.0 - frac))

    def logits(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        if h % 8 or w % 8:
            raise ValueError(f"DepthNet needs height and width divisible by 8, got {h}x{w}")
        e1 = relu(self.enc[0](x))
        e2 = relu(self.enc[1](e1))
        z = relu(self.enc[2](e2))
        for conv in self.bottleneck:
            z = relu(conv(z))
        for conv, skip in zip(self.dec, (e2, e1, x)):
            z = relu(conv(concat([upsample_bilinear2x(z), skip], axis=1)))
        return self.head(z)

    def __call__(self, x: Tensor) -> Tensor:
        return depth_from_logits(self.logits(x), self.d_min, self.d_max)


def depth_from_logits(z: Tensor, d_min: float, d_max: float) -> Tensor:
    return d_min + (d_max - d_min) * sigmoid(z)


class ANet(Module):
    """Conv stack -> global average pool -> 3 residual logits."""

    def __init__(self, cfg: ModelConfig, rng):
        c, k = cfg.base_channels, cfg.kernel
        widths = [3, c, 2 * c, 4 * c, 4 * c]
        self.convs = [Conv2d(rng, a, b, k, stride=2) for a, b in zip(widths[:-1], widths[1:])]
        self.out = Conv2d(rng, 4 * c, 3, kernel=1)

    def __call__(self, x: Tensor) -> Tensor:
        z = x
        for conv in self.convs:
            z = relu(conv(z))
        pooled = mean(z, axis=(2, 3))
        n, ch = pooled.shape
        logits = self.out(reshape(pooled, (n, ch, 1, 1)))
        return reshape(logits, (n, 3))


class RefinerNet(Module):
    """3 -> w -> w -> 3 convolutions; the last one starts at exactly zero."""

    def __init__(self, cfg: ModelConfig, rng):
        w, k = cfg.refiner_width, cfg.kernel
        self.conv1 = Conv2d(rng, 3, w, k)
        self.conv2 = Conv2d(rng, w, w, k)
        self.conv3 = Conv2d(rng, w, 3, k, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv3(relu(self.conv2(relu(self.conv1(x)))))


@dataclass
class ForwardOutputs:
    J: Tensor
    J_raw: Tensor
    D: Tensor
    t: Tensor
    A: Tensor
    A_cl: np.ndarray
    correction: Tensor
    delta: Tensor


class UDehazeNet(Module):
    def __init__(self, cfg: Optional[ModelConfig] = None):
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(self.cfg.seed)
        self.depthnet = DepthNet(self.cfg, rng)
        self.anet = ANet(self.cfg, rng)
        self.refiner = RefinerNet(self.cfg, rng)
        self.beta = Tensor(np.array(self.cfg.beta_init, dtype=np.float64), requires_grad=True)
        for name, p in self.named_parameters():
            p.name = name

    def classical_prior(self, images: np.ndarray) -> np.ndarray:
        """A_cl per image for an NCHW batch, shape (N, 3)."""
        return np.stack([fuse_classical(np.ascontiguousarray(im.transpose(1, 2, 0)), self.cfg.prior).A_cl
                         for im in images])

    def atmospheric_light(self, x: Tensor, a_cl: np.ndarray) -> Tuple[Tensor, Tensor]:
        delta = tanh(self.anet(x))
        a = clamp(Tensor(a_cl) + self.cfg.gamma * delta, self.cfg.a_min, self.cfg.a_max)
        return a, delta

    def refine(self, j_raw: Tensor) -> Tuple[Tensor, Tensor]:
        correction = tanh(self.refiner(j_raw))
        return clamp(j_raw + correction, 0.0, 1.0), correction

    def __call__(self, images, a_cl: Optional[np.ndarray] = None, t_override=None,
                 atmos_override=None) -> ForwardOutputs:
        """Run the full pipeline on an NCHW batch.

        ``a_cl`` may be precomputed (it only depends on the input). The
        overrides replace the predicted transmission / atmospheric light,
        e.g. to evaluate with known ground truth.
        """
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected an (N, 3, H, W) batch, got {x.shape}")
        if a_cl is None:
            a_cl = self.classical_prior(x.data)
        depth = self.depthnet(x)
        t = physics.transmission(depth, self.beta) if t_override is None else Tensor(t_override)
        a, delta = self.atmospheric_light(x, a_cl)
        if atmos_override is not None:
            a = Tensor(atmos_override)
        j_raw = physics.invert(x, t, a, self.cfg.t_floor)
        j, correction = self.refine(j_raw)
        return ForwardOutputs(j, j_raw, depth, t, a, np.asarray(a_cl), correction, delta)

    # snapshots

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} does not match {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)


# checkpoint I/O
#
# Layout (all integers little-endian):
#   b"UDHZ1"
#   u32 config length, config JSON (utf-8)
#   u32 parameter count
#   per parameter, in named_parameters() order:
#     u16 name length, name (utf-8), u8 ndim, u32 * ndim dims, float64le * prod(dims)

def encode_checkpoint(model: UDehazeNet, meta: Optional[dict] = None) -> bytes:
    config = json.dumps({"model": model.cfg.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(config)), config]
    params = model.named_parameters()
    parts.append(struct.pack("<I", len(params)))
    for name, p in params:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> Tuple[UDehazeNet, dict]:
    if not buf.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a UDHZ1 checkpoint (bad magic)")
    try:
        pos = len(CHECKPOINT_MAGIC)
        (clen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        header = json.loads(buf[pos:pos + clen].decode())
        pos += clen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(buf):
                raise ValueError(f"truncated data for parameter {name}")
            state[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).copy()
            pos += nbytes
    except struct.error as exc:
        raise ValueError(f"truncated checkpoint: {exc}") from exc
    model = UDehazeNet(ModelConfig.from_dict(header["model"]))
    model.load_state_dict(state)
    return model, header.get("meta", {})


def save_checkpoint(model: UDehazeNet, path, meta: Optional[dict] = None) -> None:
    """Write the binary checkpoint and a ``<path>.json`` sidecar, both atomically."""
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(model, meta))
    sidecar = {"model": model.cfg.to_dict(), **(meta or {})}
    atomic_write_bytes(path.with_name(path.name + ".json"),
                       (json.dumps(sidecar, indent=2, sort_keys=True) + "\n").encode())


def load_checkpoint(path) -> Tuple[UDehazeNet, dict]:
    return decode_checkpoint(Path(path).read_bytes())
