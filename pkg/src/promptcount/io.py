"""File formats: label-map PNGs, RGB images and flat-binary grids.

Flat-binary layout: three little-endian uint32 values ``C, He, We`` followed
by ``C*He*We`` little-endian float32 values in channel-major order.
"""

from __future__ import annotations

import os
import struct

import numpy as np
from PIL import Image

from .backend.base import ImageEmbedding, SourceImage
from .errors import ShapeError

_HEADER = struct.Struct("<3I")
_LABEL_MODES = {"I;16", "I;16B", "I;16L", "I;16N", "I"}


def load_image(path) -> SourceImage:
    """Read a PNG/JPEG; 16-bit single-channel files are label maps."""
    path = os.fspath(path)
    with Image.open(path) as im:
        im.load()
        if im.mode in _LABEL_MODES:
            labels = np.array(im, dtype=np.int64)
            if labels.min(initial=0) < 0:
                raise ShapeError(f"{path}: negative labels")
            return SourceImage(path, labels=labels)
        rgb = np.array(im.convert("RGB"), dtype=np.uint8)
    return SourceImage(path, rgb=rgb)


def save_label_map(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.min(initial=0) < 0 or labels.max(initial=0) > 0xFFFF:
        raise ShapeError("label map must be 2-D with labels in [0, 65535]")
    Image.fromarray(labels.astype(np.uint16)).save(os.fspath(path), format="PNG")


def write_flat(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    if values.ndim == 2:
        values = values[None]
    if values.ndim != 3:
        raise ShapeError(f"expected CxHxW array, got {values.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*values.shape))
        fh.write(values.astype("<f4").tobytes(order="C"))


def read_flat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ShapeError(f"{path}: truncated header")
    c, h, w = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != 4 * c * h * w:
        raise ShapeError(f"{path}: expected {c * h * w} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float64)


def write_embedding(embedding: ImageEmbedding, path) -> None:
    write_flat(embedding.values, path)


def read_embedding(path, source_h: int, source_w: int) -> ImageEmbedding:
    return ImageEmbedding(read_flat(path), source_h, source_w)
