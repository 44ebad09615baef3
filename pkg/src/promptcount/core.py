"""Grid, mask and box primitives.

Real-valued grids are 2-D ``float64`` arrays and binary masks are 2-D
``bool`` arrays, both indexed ``[row, col]`` (``[y, x]``).  Boxes and points
use ``(x, y)`` pixel coordinates with inclusive box corners.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptyMask, ShapeError

MATRIX = "matrix"
RESIDUAL = "residual"


@dataclass(frozen=True, order=True)
class Box:
    """Axis-aligned box with inclusive integer corners."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (0 <= self.x1 <= self.x2 and 0 <= self.y1 <= self.y2):
            raise ShapeError(f"invalid box {self.as_list()}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def height(self) -> int:
        return self.y2 - self.y1 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_list(self) -> List[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    def fits(self, height: int, width: int) -> bool:
        return self.x2 < width and self.y2 < height

    @classmethod
    def from_seq(cls, seq) -> "Box":
        if len(seq) != 4:
            raise ShapeError(f"box needs 4 coordinates, got {len(seq)}")
        return cls(*(int(round(float(v))) for v in seq))


@dataclass(frozen=True)
class PointPrompt:
    x: int
    y: int
    kind: str = MATRIX


def as_grid(values) -> np.ndarray:
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeError(f"grid must be 2-D, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ShapeError("grid contains non-finite values")
    return grid


def as_mask(bits) -> np.ndarray:
    mask = np.asarray(bits)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {mask.shape}")
    return mask.astype(bool, copy=False)


def check_unit(t: float, name: str) -> None:
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"{name}={t} outside [0, 1]")


def normalize_map(grid) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant grid maps to all zeros."""
    grid = as_grid(grid)
    if grid.size == 0:
        raise ShapeError("cannot normalize an empty grid")
    lo, hi = grid.min(), grid.max()
    if hi == lo:
        return np.zeros_like(grid)
    out = (grid - lo) / (hi - lo)
    # guard against rounding just outside the unit interval
    return np.clip(out, 0.0, 1.0)


def threshold_map(grid, t: float) -> np.ndarray:
    check_unit(t, "threshold")
    return as_grid(grid) >= t


def min_bounding_box(mask) -> Box:
    mask = as_mask(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMask("mask has no set bits")
    return Box(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def iou(a: Box, b: Box) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1) + 1
    iy = min(a.y2, b.y2) - max(a.y1, b.y1) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def mask_iou(a, b) -> float:
    a, b = as_mask(a), as_mask(b)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def connected_components(mask) -> List[np.ndarray]:
    """4-connected components in raster order of their first pixel."""
    mask = as_mask(mask)
    labels, n = ndimage.label(mask)
    return [labels == i for i in range(1, n + 1)]


def _overlap_matrix(src: int, dst: int) -> np.ndarray:
    # Source pixel j spans [j*dst, (j+1)*dst) and target cell i spans
    # [i*src, (i+1)*src) in units of 1/(src*dst); overlaps are integers.
    i = np.arange(dst)[:, None]
    j = np.arange(src)[None, :]
    lo = np.maximum(i * src, j * dst)
    hi = np.minimum((i + 1) * src, (j + 1) * dst)
    return np.maximum(hi - lo, 0).astype(np.int64)


def downsample_mask(mask, target_h: int, target_w: int) -> np.ndarray:
    """Area-coverage downsampling: a target cell is set iff >= 50% covered."""
    mask = as_mask(mask)
    h, w = mask.shape
    if not (0 < target_h <= h and 0 < target_w <= w):
        raise ShapeError(f"cannot downsample {h}x{w} to {target_h}x{target_w}")
    if (target_h, target_w) == (h, w):
        return mask.copy()
    ry = _overlap_matrix(h, target_h)
    rx = _overlap_matrix(w, target_w)
    covered = ry @ mask.astype(np.int64) @ rx.T
    # cell area is h*w in the scaled units
    return 2 * covered >= h * w


def upsample_mask(mask, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbour upscaling by cell centres."""
    mask = as_mask(mask)
    h, w = mask.shape
    rows = np.minimum(((2 * np.arange(target_h) + 1) * h) // (2 * target_h), h - 1)
    cols = np.minimum(((2 * np.arange(target_w) + 1) * w) // (2 * target_w), w - 1)
    return mask[np.ix_(rows, cols)]


def cell_to_pixel(x: int, y: int, grid_shape: Tuple[int, int],
                  image_shape: Tuple[int, int]) -> Tuple[int, int]:
    """Map an embedding cell to the source pixel at its centre."""
    gh, gw = grid_shape
    ih, iw = image_shape
    px = min(((2 * x + 1) * iw) // (2 * gw), iw - 1)
    py = min(((2 * y + 1) * ih) // (2 * gh), ih - 1)
    return int(px), int(py)
