"""Signature image preprocessing: Otsu background removal, inversion, resize."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import atomic_write_bytes
from .errors import DataError, ParameterError


@dataclass
class GrayImage:
    """8-bit grayscale image, 0 = black, 255 = white. ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise DataError(f"image must be a nonempty 2-D array, got shape {self.pixels.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path) -> GrayImage:
    """Read a binary (P5) PGM with maxval 255."""
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise DataError(f"{path}: malformed PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise DataError(f"{path}: only binary P5 PGM is supported, found {fields[0]!r}")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise DataError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise DataError(f"{path}: pixel data truncated")
    return GrayImage(np.frombuffer(payload, dtype=np.uint8).reshape(height, width))


def encode_pgm(img: GrayImage) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


def write_pgm(path, img: GrayImage):
    atomic_write_bytes(path, encode_pgm(img))


def otsu_threshold(img: GrayImage) -> int:
    """Threshold maximizing between-class variance of {<= t} vs {> t}.

    Compared exactly in integer arithmetic so ties resolve to the smallest t.
    A single-valued image returns that value.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256).astype(np.int64)
    levels = np.flatnonzero(hist)
    if levels.size == 1:
        return int(levels[0])
    n_total = int(hist.sum())
    s_total = int((hist * np.arange(256)).sum())
    n0 = np.cumsum(hist).tolist()
    s0 = np.cumsum(hist * np.arange(256)).tolist()
    # sigma_B^2 is proportional to (S0*n1 - S1*n0)^2 / (n0*n1)
    best_t, best_num, best_den = 0, 0, 1
    for t in range(256):
        a, b = n0[t], n_total - n0[t]
        if a == 0 or b == 0:
            continue
        num = (s0[t] * b - (s_total - s0[t]) * a) ** 2
        den = a * b
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def binarize_invert(img: GrayImage, t: int) -> GrayImage:
    """Background (> t) becomes 0; ink (<= t) becomes 255 - value."""
    px = img.pixels
    return GrayImage(np.where(px > t, 0, 255 - px).astype(np.uint8))


def _bilinear_axis(n_in: int, n_out: int):
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_gray(img: GrayImage, target_w: int, target_h: int) -> GrayImage:
    """Bilinear resize with half-pixel centers, rounding half up."""
    if target_w < 1 or target_h < 1:
        raise ParameterError(f"target size must be positive, got {target_w}x{target_h}")
    if (target_w, target_h) == (img.width, img.height):
        return GrayImage(img.pixels.copy())
    src = img.pixels.astype(np.float64)
    y0, y1, fy = _bilinear_axis(img.height, target_h)
    x0, x1, fx = _bilinear_axis(img.width, target_w)
    rows = src[y0] * (1 - fy)[:, None] + src[y1] * fy[:, None]
    out = rows[:, x0] * (1 - fx) + rows[:, x1] * fx
    return GrayImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def normalize_polarity(img: GrayImage) -> GrayImage:
    """Otsu + background removal, producing bright strokes on a black background.

    Images whose Otsu background is already the dark side (more pixels at or
    below the threshold than above it) are kept in polarity: the dark side is
    zeroed and the bright strokes are left untouched. This makes the pipeline
    idempotent on its own output.
    """
    t = otsu_threshold(img)
    px = img.pixels
    dark = int((px <= t).sum())
    if 0 < dark < px.size and dark > px.size - dark:
        return GrayImage(np.where(px > t, px, 0).astype(np.uint8))
    return binarize_invert(img, t)


def preprocess_gray(img: GrayImage, width: int, height: int) -> GrayImage:
    return resize_gray(normalize_polarity(img), width, height)


def preprocess_image(img: GrayImage, input_shape) -> np.ndarray:
    """Return a float32 tensor of shape (1, H, W) with values in [0, 1]."""
    _, h, w = input_shape
    out = preprocess_gray(img, w, h)
    return (out.pixels.astype(np.float32) / np.float32(255))[None, :, :]
