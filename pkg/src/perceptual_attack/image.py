"""Unit-interval images, PNG I/O, channel-shared noise and out-of-object masks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageFormatError(ValueError):
    """The file is not an 8-bit RGB or grayscale PNG."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """H x W x C image with values in [0, 1], stored read-only as float64."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected H x W x C with C in (1, 3), got shape {data.shape}")
        if data.size == 0:
            raise ValueError("empty image")
        if not np.all((data >= 0.0) & (data <= 1.0)):
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def _trusted(cls, data: np.ndarray) -> "ImageTensor":
        # Skips validation; callers guarantee shape and range (hot attack loop).
        obj = object.__new__(cls)
        object.__setattr__(obj, "data", _frozen(data))
        return obj

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


def as_array(img) -> np.ndarray:
    if isinstance(img, ImageTensor):
        return img.data
    a = np.asarray(img, dtype=np.float64)
    return a[:, :, None] if a.ndim == 2 else a


def load_png(path) -> ImageTensor:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: not a PNG ({im.format})")
            if im.mode not in ("L", "RGB"):
                raise ImageFormatError(
                    f"{path}: unsupported PNG mode {im.mode!r}; need 8-bit RGB or grayscale"
                )
            pixels = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a readable image") from exc
    return ImageTensor(pixels.astype(np.float64) / 255.0)


def save_png(img: ImageTensor, path) -> None:
    q = np.floor(as_array(img) * 255.0 + 0.5).astype(np.uint8)
    if q.shape[2] == 1:
        out = Image.fromarray(q[:, :, 0], mode="L")
    else:
        out = Image.fromarray(q, mode="RGB")
    out.save(Path(path), format="PNG")


def apply_noise(x: ImageTensor, delta) -> ImageTensor:
    """Add one noise value per pixel to every channel and clamp to [0, 1]."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (x.height, x.width):
        raise ValueError(f"noise map shape {delta.shape} does not match image {x.shape[:2]}")
    return ImageTensor._trusted(np.clip(x.data + delta[:, :, None], 0.0, 1.0))


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box, inclusive of (x0, y0) and exclusive of (x1, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def check(self, height: int, width: int) -> None:
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise ValueError(f"invalid box {self} for a {height}x{width} image")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @classmethod
    def from_dict(cls, d) -> "BoundingBox":
        return cls(int(d["x0"]), int(d["y0"]), int(d["x1"]), int(d["y1"]))


def load_bbox(path) -> BoundingBox:
    with open(path) as fh:
        return BoundingBox.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Per-pixel permission map; True marks a pixel the attack may perturb."""

    allowed: np.ndarray

    def __post_init__(self):
        a = np.array(self.allowed, dtype=bool)
        if a.ndim != 2:
            raise ValueError("mask must be 2-D")
        object.__setattr__(self, "allowed", _frozen(a))

    @property
    def height(self) -> int:
        return self.allowed.shape[0]

    @property
    def width(self) -> int:
        return self.allowed.shape[1]

    @property
    def allowed_fraction(self) -> float:
        return int(self.allowed.sum()) / self.allowed.size

    def tiles_allowed(self, tile_size: int) -> np.ndarray:
        """True for every tile containing at least one allowed pixel."""
        th = -(-self.height // tile_size)
        tw = -(-self.width // tile_size)
        padded = np.zeros((th * tile_size, tw * tile_size), dtype=bool)
        padded[: self.height, : self.width] = self.allowed
        return padded.reshape(th, tile_size, tw, tile_size).any(axis=(1, 3))


def mask_from_bbox(box: BoundingBox, h: int, w: int) -> PixelMask:
    box.check(h, w)
    allowed = np.ones((h, w), dtype=bool)
    allowed[box.y0 : box.y1, box.x0 : box.x1] = False
    return PixelMask(allowed)
