"""Raw float image files and optional PNG export.

Raw layout (little-endian): 4-byte magic ``TAIM``, uint32 width, uint32
height, then ``height * width * 3`` float32 RGB values in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFile, IoFailure

MAGIC = b"TAIM"
_HEADER = struct.Struct("<4sII")


def write_raw(path, image) -> None:
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {img.shape}")
    h, w, _ = img.shape
    try:
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, w, h))
            f.write(np.ascontiguousarray(img).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_raw(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise CorruptFile(f"{path}: file too short for an image header")
    magic, w, h = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptFile(f"{path}: not a raw image (magic {magic!r})")
    n = w * h * 3 * 4
    if len(data) != _HEADER.size + n:
        raise CorruptFile(f"{path}: expected {n} payload bytes, found {len(data) - _HEADER.size}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, 3).astype(np.float32)


def write_png(path, image) -> None:
    """8-bit PNG for viewing (needs Pillow)."""
    from PIL import Image

    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    Image.fromarray(np.round(img * 255).astype(np.uint8), "RGB").save(path)
