"""Image files, paired datasets, resizing and synthetic underwater scenes.

Images are plain ``float64`` arrays of shape (H, W, 3) with values in [0, 1].
8-bit files decode as ``v / 255`` and encode with round-half-up.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .tensor import bilinear_matrix

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".png")
DEPTH_RANGE = (0.1, 10.0)


class ImageFormatError(ValueError):
    """Raised for unreadable, truncated or unsupported image files."""


def check_image(img: np.ndarray, what: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{what} must have shape (H, W, 3), got {img.shape}")
    return img


# PPM / PNG

def _read_ppm_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PPM header")
    return buf[start:pos], pos


def decode_ppm(buf: bytes) -> np.ndarray:
    """Decode a binary (P6) 8-bit PPM."""
    magic, pos = _read_ppm_token(buf, 0)
    if magic != b"P6":
        raise ImageFormatError(f"not a binary PPM (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_ppm_token(buf, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"bad PPM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PPM supported (maxval {maxval})")
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid PPM size {width}x{height}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    need = width * height * 3
    raster = buf[pos:pos + need]
    if len(raster) < need:
        raise ImageFormatError(f"truncated PPM raster: expected {need} bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def encode_ppm(pixels: np.ndarray) -> bytes:
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to bytes with round-half-up (values clipped first)."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Read a P6 PPM or 8-bit PNG into an (H, W, 3) float array in [0, 1]."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        pixels = decode_ppm(path.read_bytes())
    elif suffix == ".png":
        from PIL import Image

        try:
            with Image.open(path) as im:
                im.load()
                if im.mode not in ("RGB", "RGBA", "L", "P"):
                    raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode} (need 8-bit)")
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (OSError, SyntaxError) as exc:
            raise ImageFormatError(f"{path}: {exc}") from exc
    else:
        raise ImageFormatError(f"{path}: unsupported format {suffix!r} (use .ppm or .png)")
    return pixels.astype(np.float64) / 255.0


def save_image(img: np.ndarray, path) -> None:
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    pixels = to_uint8(check_image(img))
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        path.write_bytes(encode_ppm(pixels))
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(pixels).save(path, format="PNG")
    else:
        raise ImageFormatError(f"{path}: unsupported format {suffix!r} (use .ppm or .png)")


# resizing

def resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres, same convention as the upsampler."""
    img = check_image(img)
    if h < 1 or w < 1:
        raise ValueError(f"target size must be >= 1, got {h}x{w}")
    if img.shape[:2] == (h, w):
        return img.copy()
    mh = bilinear_matrix(img.shape[0], h)
    mw = bilinear_matrix(img.shape[1], w)
    return np.einsum("ai,ijc,bj->abc", mh, img, mw)


# paired datasets

@dataclass
class PairedSample:
    input: np.ndarray
    reference: np.ndarray
    id: str


def _image_files(directory: Path) -> dict:
    files = {}
    for entry in directory.iterdir():
        if entry.is_file() and entry.suffix.lower() in IMAGE_SUFFIXES:
            if entry.stem in files:
                raise ValueError(f"duplicate image stem {entry.stem!r} in {directory}")
            files[entry.stem] = entry
    return files


def sorted_stems(stems) -> List[str]:
    """Lexicographic byte order, independent of locale and platform."""
    return sorted(stems, key=lambda s: s.encode("utf-8"))


def load_paired_dataset(input_dir, reference_dir,
                        resize_to: Optional[Tuple[int, int]] = (128, 128)) -> List[PairedSample]:
    """Load degraded/reference pairs matched by filename stem, sorted by name.

    ``resize_to=None`` keeps native sizes (pairs must then already agree).
    """
    inputs = _image_files(Path(input_dir))
    refs = _image_files(Path(reference_dir))
    orphans = sorted_stems(set(inputs) ^ set(refs))
    if orphans:
        raise ValueError("unmatched images (present in only one directory): " + ", ".join(orphans))
    samples = []
    for stem in sorted_stems(inputs):
        a, b = load_image(inputs[stem]), load_image(refs[stem])
        if resize_to is not None:
            a = resize_bilinear(a, *resize_to)
            b = resize_bilinear(b, *resize_to)
        elif a.shape != b.shape:
            raise ValueError(f"{stem}: input {a.shape} and reference {b.shape} differ in size")
        samples.append(PairedSample(a, b, stem))
    return samples


def load_dataset_root(root, resize_to=(128, 128)) -> List[PairedSample]:
    """``<root>/input`` and ``<root>/reference`` layout."""
    root = Path(root)
    return load_paired_dataset(root / "input", root / "reference", resize_to)


# synthetic scenes

@dataclass
class SynthParams:
    beta: Tuple[float, float, float] = (1.2, 0.6, 0.3)
    atmos: Tuple[float, float, float] = (0.45, 0.60, 0.75)
    depth_range: Tuple[float, float] = (0.5, 8.0)
    modes: int = 4


@dataclass
class SynthScene:
    clean: np.ndarray
    depth: np.ndarray
    beta_true: np.ndarray
    A_true: np.ndarray
    degraded: np.ndarray
    transmission: np.ndarray = field(repr=False, default=None)


def smooth_depth_field(rng: np.random.Generator, h: int, w: int, modes: int = 4,
                       depth_range=(0.5, 8.0)) -> np.ndarray:
    """Sum of ``modes`` random cosines with amplitude 1/k, mapped onto ``depth_range``."""
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    field_ = np.zeros((h, w))
    for k in range(1, modes + 1):
        fx, fy = rng.uniform(-k, k, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field_ += np.cos(2 * np.pi * (fx * xx + fy * yy) + phase) / k
    lo, hi = depth_range
    span = field_.max() - field_.min()
    if span <= 0:
        return np.full((h, w), 0.5 * (lo + hi))
    return lo + (hi - lo) * (field_ - field_.min()) / span


def synthesize_scene(clean: np.ndarray, seed: int, params: Optional[SynthParams] = None,
                     depth: Optional[np.ndarray] = None) -> SynthScene:
    """Degrade ``clean`` with a random smooth depth field and Beer-Lambert haze.

    ``degraded = clip(clean * t + A * (1 - t), 0, 1)`` with ``t_c = exp(-beta_c * depth)``.
    Passing ``depth`` skips the random field.
    """
    params = params or SynthParams()
    clean = check_image(clean, "clean image")
    if clean.min() < 0 or clean.max() > 1:
        raise ValueError("clean image values must lie in [0, 1]")
    h, w, _ = clean.shape
    if depth is None:
        rng = np.random.default_rng(seed)
        depth = smooth_depth_field(rng, h, w, params.modes, params.depth_range)
    beta = np.asarray(params.beta, dtype=np.float64)
    atmos = np.asarray(params.atmos, dtype=np.float64)
    t = np.exp(-beta[None, None, :] * depth[:, :, None])
    degraded = np.clip(clean * t + atmos * (1.0 - t), 0.0, 1.0)
    return SynthScene(clean, depth, beta, atmos, degraded, t)


def procedural_clean_image(seed: int, h: int = 64, w: int = 64) -> np.ndarray:
    """A haze-free stand-in scene: shaded luminance structure with mild per-object tint.

    Channels are strongly correlated, as in natural photographs. Used when no
    real clean images are available (synthetic experiments, demos).
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    lum = rng.uniform(0.35, 0.65) + rng.uniform(-0.25, 0.25) * xx + rng.uniform(-0.25, 0.25) * yy
    tint = np.broadcast_to(1.0 + rng.uniform(-0.15, 0.15, size=3), (h, w, 3)).copy()
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, 1, size=2)
        ry, rx = rng.uniform(0.08, 0.3, size=2)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        freq = rng.uniform(4, 16)
        shade = rng.uniform(0.15, 0.85) + 0.08 * np.sin(2 * np.pi * freq * (xx + yy))
        lum = np.where(mask, shade, lum)
        tint[mask] = 1.0 + rng.uniform(-0.3, 0.3, size=3)
    img = lum[:, :, None] * tint + rng.normal(0.0, 0.01, size=(h, w, 3))
    return np.clip(img, 0.0, 1.0)


def iter_image_paths(path) -> List[Path]:
    """A single image file, or every .ppm/.png in a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = _image_files(path)
        return [files[s] for s in sorted_stems(files)]
    if not path.exists():
        raise FileNotFoundError(path)
    return [path]


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def images_to_nchw(images: Sequence[np.ndarray]) -> np.ndarray:
    return np.ascontiguousarray(np.stack([check_image(im) for im in images]).transpose(0, 3, 1, 2))


def nchw_to_images(batch: np.ndarray) -> List[np.ndarray]:
    return [np.ascontiguousarray(x.transpose(1, 2, 0)) for x in batch]
