from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..core import Box, PointPrompt
from ..errors import ShapeError

EXEMPLAR = "exemplar"


@dataclass(frozen=True)
class SourceImage:
    """Query image holding either an RGB8 raster or a label map.

    ``labels`` is the per-pixel non-negative object label (0 = background)
    and ``rgb`` an ``(H, W, 3)`` uint8 raster; exactly one is set.
    """

    id: str
    labels: Optional[np.ndarray] = None
    rgb: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.labels is None) == (self.rgb is None):
            raise ShapeError("SourceImage needs exactly one of labels or rgb")
        if self.labels is not None:
            if self.labels.ndim != 2 or self.labels.min(initial=0) < 0:
                raise ShapeError("label map must be 2-D and non-negative")
        elif self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ShapeError(f"rgb raster must be HxWx3, got {self.rgb.shape}")

    @property
    def shape(self):
        payload = self.labels if self.labels is not None else self.rgb
        return payload.shape[:2]

    @property
    def height(self) -> int:
        return self.shape[0]

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def is_label_map(self) -> bool:
        return self.labels is not None


@dataclass(frozen=True)
class ImageEmbedding:
    values: np.ndarray  # (C, He, We)
    source_h: int
    source_w: int

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ShapeError(f"embedding must be CxHxW, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("embedding contains non-finite values")
        _, h, w = self.values.shape
        if h > self.source_h or w > self.source_w:
            raise ShapeError("embedding grid larger than the source image")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_shape(self):
        return self.values.shape[1:]


@dataclass
class MaskRecord:
    mask: np.ndarray
    origin: str
    round: int = 0
    score: Optional[float] = None
    _box: Optional[Box] = field(default=None, repr=False, compare=False)

    @property
    def box(self) -> Box:
        if self._box is None:
            from ..core import min_bounding_box
            self._box = min_bounding_box(self.mask)
        return self._box

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


class Backend(ABC):
    """Segmentation backbone: image encoder plus prompt-driven decoder."""

    #: whether decode calls may be issued from several threads at once
    concurrent = True

    @abstractmethod
    def encode(self, image: SourceImage) -> ImageEmbedding:
        ...

    @abstractmethod
    def decode_box(self, embedding: ImageEmbedding, image: SourceImage,
                   box: Box) -> MaskRecord:
        ...

    @abstractmethod
    def decode_points(self, embedding: ImageEmbedding, image: SourceImage,
                      points: Sequence[PointPrompt]) -> List[MaskRecord]:
        """Decode each point independently.

        Points that land on background produce no record; callers infer the
        number of drops from ``len(points) - len(result)``.
        """
