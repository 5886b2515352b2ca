"""Float image buffers with PNG and PFM input/output.

PNG files are 8-bit and treated as linear values in [0, 1] (no sRGB transfer
curve is applied in either direction). PFM is used where tests need lossless
float round trips.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass
class ImageBuffer:
    """data has shape (height, width) for scalar or (height, width, 3) for RGB."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 3 and self.data.shape[2] == 1:
            self.data = self.data[:, :, 0]
        if self.data.ndim not in (2, 3) or (self.data.ndim == 3 and self.data.shape[2] != 3):
            raise ValueError(f"image must be (H, W) or (H, W, 3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image values must be finite")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def planes(self) -> np.ndarray:
        """View with an explicit channel axis, shape (H, W, C)."""
        return self.data[:, :, None] if self.data.ndim == 2 else self.data

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.data.copy())


def channel_mean(values: np.ndarray) -> np.ndarray:
    """Mean over the channel axis if present."""
    return values.mean(axis=2) if values.ndim == 3 else values


def write_png(img: ImageBuffer, path) -> None:
    arr = np.clip(img.data, 0.0, 1.0)
    q = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="L" if img.channels == 1 else "RGB").save(path)


def read_png(path) -> ImageBuffer:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return ImageBuffer(arr)


def write_pfm(img: ImageBuffer, path) -> None:
    color = img.channels == 3
    with open(path, "wb") as f:
        f.write(b"PF\n" if color else b"Pf\n")
        f.write(f"{img.width} {img.height}\n".encode())
        f.write(b"-1.0\n")  # negative scale marks little endian
        data = img.planes() if color else img.data
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> ImageBuffer:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(tok) for tok in f.readline().split())
        scale = float(f.readline())
        channels = 3 if header == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(4 * w * h * channels), dtype=dtype)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return ImageBuffer(np.flipud(raw.reshape(shape)).astype(np.float64))
