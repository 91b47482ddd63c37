"""8-bit raster container and lossless image I/O (PNG, binary PPM/PGM)."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from laserloc.errors import ImageFormatError, ParameterError

_FORMATS = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Row-major 8-bit image with 1 or 3 channels.

    ``pixels`` has shape ``(height, width)`` for single-channel images and
    ``(height, width, 3)`` for color. The array is made read-only on
    construction so images can be shared freely.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.dtype != np.uint8:
            raise ParameterError(f"expected uint8 pixels, got {arr.dtype}")
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)):
            raise ParameterError(f"unsupported pixel array shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParameterError("image must be at least 1x1")
        arr = np.array(arr, copy=True, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_bytes(cls, width: int, height: int, channels: int, data) -> "RasterImage":
        buf = np.frombuffer(bytes(data), dtype=np.uint8)
        if buf.size != width * height * channels:
            raise ParameterError(
                f"data length {buf.size} != {width}*{height}*{channels}"
            )
        shape = (height, width) if channels == 1 else (height, width, channels)
        return cls(buf.reshape(shape))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    def __repr__(self):
        return f"RasterImage({self.width}x{self.height}x{self.channels})"


def as_array(img) -> np.ndarray:
    """Accept a RasterImage or an ndarray and return the pixel array."""
    if isinstance(img, RasterImage):
        return img.pixels
    return np.asarray(img)


def mask_to_image(mask: np.ndarray) -> RasterImage:
    """Serialize a 0/1 mask as a single-channel image with 1 -> 255."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise ParameterError("mask must be a 2-D array of 0/1 values")
    return RasterImage((mask.astype(np.uint8) * 255))


def image_to_mask(img: RasterImage) -> np.ndarray:
    if img.channels != 1:
        raise ParameterError("mask images are single-channel")
    return (img.pixels > 127).astype(np.uint8)


def _format_for(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    try:
        return _FORMATS[ext]
    except KeyError:
        raise ImageFormatError(f"unsupported image extension {ext!r}") from None


def load_image(path) -> RasterImage:
    _format_for(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ImageFormatError(f"{path}: unsupported format {im.format}")
            if im.mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except FileNotFoundError:
        raise
    except OSError as exc:
        if not os.path.exists(path):
            raise
        raise ImageFormatError(f"{path}: {exc}") from exc
    return RasterImage(arr)


def save_image(img: RasterImage, path) -> None:
    fmt = _format_for(path)
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pgm" and img.channels != 1:
        raise ImageFormatError("PGM holds single-channel images only")
    if ext == ".ppm" and img.channels != 3:
        raise ImageFormatError("PPM holds 3-channel images only")
    Image.fromarray(img.pixels).save(path, format=fmt)


def red_channel(img: RasterImage) -> RasterImage:
    if img.channels != 3:
        raise ParameterError("red_channel needs a 3-channel image")
    return RasterImage(img.pixels[:, :, 0])
