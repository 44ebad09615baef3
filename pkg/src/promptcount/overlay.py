from __future__ import annotations

import colorsys
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .backend.base import SourceImage
from .core import Box
from .counter import CountResult


def mask_color(index: int):
    # golden-ratio hue walk; stable per stack index
    r, g, b = colorsys.hsv_to_rgb((index * 0.618033988749895) % 1.0, 0.75, 1.0)
    return int(r * 255), int(g * 255), int(b * 255)


def _base(image: SourceImage) -> np.ndarray:
    if image.rgb is not None:
        return image.rgb.astype(np.float64)
    gray = np.where(image.labels > 0, 90.0, 30.0)
    return np.repeat(gray[..., None], 3, axis=2)


def render_overlay(image: SourceImage, result: CountResult,
                   exemplar_boxes: Sequence[Box], path, alpha: float = 0.5) -> None:
    canvas = _base(image)
    for i, rec in enumerate(result.records):
        color = np.array(mask_color(i), dtype=np.float64)
        canvas[rec.mask] = (1 - alpha) * canvas[rec.mask] + alpha * color
    im = Image.fromarray(np.clip(canvas, 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(im)
    for i, rec in enumerate(result.records):
        b = rec.box
        draw.rectangle([b.x1, b.y1, b.x2, b.y2], outline=mask_color(i))
    for b in exemplar_boxes:
        draw.rectangle([b.x1, b.y1, b.x2, b.y2], outline=(255, 255, 255), width=2)
    draw.text((2, 2), f"count: {result.count}", fill=(255, 255, 0))
    im.save(path, format="PNG")
