"""Deterministic label-map backend used by tests and synthetic benchmarks.

Every pixel with label ``l`` is embedded as the one-hot vector
``e_(l mod C)``, so two labels share a feature exactly when they agree
modulo ``C``.  Synthetic scenes exploit this: instances of one object class
carry distinct labels from the same residue class.
"""

from __future__ import annotations

from typing import Dict, List, Sequence

import numpy as np

from ..core import Box, PointPrompt
from ..errors import BackendError, EmptyExemplar, ShapeError
from .base import EXEMPLAR, Backend, ImageEmbedding, MaskRecord, SourceImage

DEFAULT_CHANNELS = 16


class MockBackend(Backend):
    def __init__(self, channels: int = DEFAULT_CHANNELS):
        if channels < 1:
            raise ShapeError("channels must be positive")
        self.channels = channels

    def _labels(self, image: SourceImage) -> np.ndarray:
        if not image.is_label_map:
            raise BackendError(f"mock backend needs a label map, got RGB image {image.id!r}")
        return image.labels

    def encode(self, image: SourceImage) -> ImageEmbedding:
        labels = self._labels(image)
        idx = labels.astype(np.int64) % self.channels
        values = np.zeros((self.channels,) + labels.shape, dtype=np.float64)
        np.put_along_axis(values, idx[None], 1.0, axis=0)
        return ImageEmbedding(values, labels.shape[0], labels.shape[1])

    def _label_mask(self, labels: np.ndarray, label: int,
                    cache: Dict[int, np.ndarray]) -> np.ndarray:
        mask = cache.get(label)
        if mask is None:
            mask = labels == label
            mask.flags.writeable = False
            cache[label] = mask
        return mask

    def decode_box(self, embedding: ImageEmbedding, image: SourceImage,
                   box: Box) -> MaskRecord:
        labels = self._labels(image)
        if not box.fits(*labels.shape):
            raise ShapeError(f"box {box.as_list()} outside {labels.shape}")
        crop = labels[box.y1:box.y2 + 1, box.x1:box.x2 + 1].ravel()
        crop = crop[crop > 0]
        if crop.size == 0:
            raise EmptyExemplar(f"box {box.as_list()} covers only background")
        values, counts = np.unique(crop, return_counts=True)
        # ties resolve to the smallest label
        label = int(values[np.argmax(counts)])
        return MaskRecord(labels == label, EXEMPLAR, score=1.0)

    def decode_points(self, embedding: ImageEmbedding, image: SourceImage,
                      points: Sequence[PointPrompt]) -> List[MaskRecord]:
        labels = self._labels(image)
        h, w = labels.shape
        cache: Dict[int, np.ndarray] = {}
        out = []
        for p in points:
            if not (0 <= p.x < w and 0 <= p.y < h):
                raise ShapeError(f"point ({p.x}, {p.y}) outside {labels.shape}")
            label = int(labels[p.y, p.x])
            if label == 0:
                continue
            out.append(MaskRecord(self._label_mask(labels, label, cache), p.kind, score=1.0))
        return out
