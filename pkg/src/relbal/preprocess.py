"""Pixel-array augmentation: bilinear resize, horizontal flip, random crop.

Images are ``(height, width, channels)`` float arrays with values in [0, 1].
No image decoding happens here.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import InvalidInputError


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise InvalidInputError(f"expected an H x W x C array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite pixels")
    return arr


def _source_coords(out_size: int, in_size: int):
    # half-pixel centres, clamped to the valid grid
    scale = in_size / out_size
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, src - lo


def bilinear_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Resize with bilinear interpolation over the four neighbouring pixels.

    Output pixel ``(r, c)`` maps back to source coordinate
    ``((r + 0.5) * H / out_h - 0.5, (c + 0.5) * W / out_w - 0.5)``, clamped
    to the image. The value is the standard weighted combination of
    ``Q11, Q12, Q21, Q22`` with weights ``(x2 - x)(y2 - y)`` etc. on a unit
    grid cell.
    """
    src = as_image(img)
    if out_h < 1 or out_w < 1:
        raise InvalidInputError(f"output size must be at least 1x1, got {out_h}x{out_w}")
    h, w, _ = src.shape
    y1, y2, fy = _source_coords(out_h, h)
    x1, x2, fx = _source_coords(out_w, w)
    q11 = src[y1][:, x1]
    q12 = src[y1][:, x2]
    q21 = src[y2][:, x1]
    q22 = src[y2][:, x2]
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = (1.0 - fx) * q11 + fx * q12
    bottom = (1.0 - fx) * q21 + fx * q22
    return (1.0 - fy) * top + fy * bottom


def horizontal_flip(img) -> np.ndarray:
    """Column ``j`` of the input becomes column ``n + 1 - j`` (1-based)."""
    return as_image(img)[:, ::-1, :].copy()


def random_crop(img, crop_h: int, crop_w: int, rng: np.random.Generator) -> np.ndarray:
    src = as_image(img)
    h, w, _ = src.shape
    if crop_h < 1 or crop_w < 1 or crop_h > h or crop_w > w:
        raise InvalidInputError(f"crop {crop_h}x{crop_w} does not fit in image {h}x{w}")
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    return src[top:top + crop_h, left:left + crop_w, :].copy()


@dataclass(frozen=True)
class AugmentConfig:
    resize_h: int = 256
    resize_w: int = 256
    crop_h: int = 224
    crop_w: int = 224
    flip_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise InvalidInputError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")


def augment_pipeline(img, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Resize, then flip with probability ``cfg.flip_prob``, then random-crop.

    One uniform draw is always consumed for the flip decision so that the
    crop offsets do not depend on the flip probability.
    """
    out = bilinear_resize(img, cfg.resize_h, cfg.resize_w)
    if rng.random() < cfg.flip_prob:
        out = horizontal_flip(out)
    return random_crop(out, cfg.crop_h, cfg.crop_w, rng)


def write_raw_array(path, img) -> None:
    """Write ``H W C`` on the first line, then whitespace-separated pixels."""
    arr = as_image(img)
    h, w, c = arr.shape
    body = " ".join(repr(float(v)) for v in arr.ravel())
    Path(path).write_text(f"{h} {w} {c}\n{body}\n")


def read_raw_array(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if len(tokens) < 3:
        raise InvalidInputError(f"{path}: missing header")
    h, w, c = (int(t) for t in tokens[:3])
    values = tokens[3:]
    if len(values) != h * w * c:
        raise InvalidInputError(f"{path}: expected {h * w * c} pixel values, found {len(values)}")
    return np.array([float(v) for v in values], dtype=np.float64).reshape(h, w, c)
