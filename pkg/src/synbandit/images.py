"""8-bit image arrays and loading from PNG / binary PPM (P6) files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class ImageError(Exception):
    pass


@dataclass
class ImageArray:
    """An 8-bit intensity image, pixels shaped (height, width, channels)."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.channels not in (1, 3):
            raise ImageError(f"channels must be 1 or 3, got {self.channels}")
        if self.pixels.shape != (self.height, self.width, self.channels):
            raise ImageError(
                f"pixel shape {self.pixels.shape} != "
                f"({self.height}, {self.width}, {self.channels})"
            )
        if self.pixels.dtype != np.uint8:
            arr = np.asarray(self.pixels)
            if arr.min() < 0 or arr.max() > 255:
                raise ImageError("pixel values outside [0, 255]")
            self.pixels = arr.astype(np.uint8)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageArray":
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ImageError(f"expected 2-D or 3-D array, got shape {arr.shape}")
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, pixels=arr)


def read_image(path: Path | str) -> ImageArray:
    """Load a PNG or binary PPM image; other modes are converted to RGB."""
    with Image.open(path) as img:
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.uint8)[:, :, None]
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return ImageArray.from_array(arr)


def write_ppm(path: Path | str, pixels: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary PPM (P6)."""
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"PPM needs an (H, W, 3) array, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())
