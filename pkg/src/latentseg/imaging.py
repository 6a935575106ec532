"""Grayscale latent images and the preprocessed variants used for voting."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels

MIN_SIDE = 32
VARIANT_KINDS = ("original", "centered", "equalized", "inverted")


class ImageValidationError(ValueError):
    """Raised when pixel data cannot form a valid latent image."""


@dataclass(frozen=True, eq=False)
class LatentImage:
    pixels: np.ndarray
    id: str = ""
    dpi: int = 500

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ImageValidationError(f"expected a 2-D pixel grid, got shape {px.shape}")
        if px.size == 0:
            raise ImageValidationError("image has zero area")
        if px.shape[0] < MIN_SIDE or px.shape[1] < MIN_SIDE:
            raise ImageValidationError(
                f"image {px.shape[1]}x{px.shape[0]} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.floating) and not np.all(np.isfinite(px)):
                raise ImageValidationError("non-finite pixel values")
            if px.min() < 0 or px.max() > 255 or not np.all(px == np.round(px)):
                raise ImageValidationError("pixel values must be integers in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray) -> "LatentImage":
        return LatentImage(pixels, id=self.id, dpi=self.dpi)

    def __eq__(self, other):
        if not isinstance(other, LatentImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True)
class GrayscaleVariant:
    kind: str
    image: LatentImage


def load_grayscale(path, image_id: str | None = None) -> LatentImage:
    """Read an image file as 8-bit grayscale.

    Multi-channel files are reduced by averaging the colour channels (alpha
    is dropped).
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise ImageValidationError(f"{path}: image has zero area")
            if im.mode in ("L", "1", "P"):
                arr = np.asarray(im.convert("L"))
            elif im.mode in ("I;16", "I", "F"):
                raise ImageValidationError(f"{path}: only 8-bit images are supported (mode {im.mode})")
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = np.floor(rgb.mean(axis=2) + 0.5).astype(np.uint8)
    except (FileNotFoundError, IsADirectoryError, PermissionError):
        raise
    except ImageValidationError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return LatentImage(arr, id=image_id if image_id is not None else path.stem)


def save_grayscale(img: LatentImage | np.ndarray, path) -> None:
    pixels = img.pixels if isinstance(img, LatentImage) else np.asarray(img, dtype=np.uint8)
    Image.fromarray(pixels, mode="L").save(Path(path))


def invert(img: LatentImage) -> LatentImage:
    return img.with_pixels(255 - img.pixels)


def center_normalize(img: LatentImage, target: float = 128.0) -> LatentImage:
    """Shift intensities so the mean sits at ``target``, then clip and round."""
    px = img.pixels.astype(np.float64)
    shifted = px + (target - px.mean())
    return img.with_pixels(np.clip(np.floor(shifted + 0.5), 0, 255).astype(np.uint8))


def histogram_equalize(img: LatentImage) -> LatentImage:
    lut = kernels.equalize_lut(img.pixels)
    return img.with_pixels(lut[img.pixels])


def generate_variants(img: LatentImage) -> list[GrayscaleVariant]:
    """The fixed four-member variant set: original, centered, equalized, inverted."""
    return [
        GrayscaleVariant("original", img),
        GrayscaleVariant("centered", center_normalize(img)),
        GrayscaleVariant("equalized", histogram_equalize(img)),
        GrayscaleVariant("inverted", invert(img)),
    ]


def variant_by_kind(img: LatentImage, kind: str) -> LatentImage:
    if kind == "original":
        return img
    if kind == "centered":
        return center_normalize(img)
    if kind == "equalized":
        return histogram_equalize(img)
    if kind == "inverted":
        return invert(img)
    raise ValueError(f"unknown variant kind {kind!r}; expected one of {VARIANT_KINDS}")
