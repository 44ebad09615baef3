"""Synthetic label-map scenes with known object counts.

Target objects are disjoint axis-aligned rectangles.  Instance ``k`` gets
label ``class_label + k * label_stride`` so that, under the mock backend
with ``label_stride`` channels, every target shares one feature vector while
remaining a separate instance.  Optional distractors use another residue
class and are not part of the ground truth.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .backend.mock import DEFAULT_CHANNELS
from .core import Box
from .errors import ConfigError, GenError
from .io import save_label_map


@dataclass
class Scene:
    labels: np.ndarray
    objects: List[Tuple[int, Box]]
    distractors: List[Tuple[int, Box]]

    @property
    def count(self) -> int:
        return len(self.objects)

    def exemplars(self, n: int = 3) -> List[Box]:
        """Boxes of the ``n`` largest targets (ties broken by label)."""
        ranked = sorted(self.objects, key=lambda o: (-o[1].area, o[0]))
        return [box for _, box in ranked[:n]]

    def points(self) -> List[List[float]]:
        return [[(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2] for _, b in self.objects]


def _clear(box: Box, placed: Sequence[Box], sep: int) -> bool:
    for o in placed:
        gap_x = max(o.x1 - box.x2, box.x1 - o.x2) - 1
        gap_y = max(o.y1 - box.y2, box.y1 - o.y2) - 1
        if gap_x < sep and gap_y < sep:
            return False
    return True


def generate_scene(rng: np.random.Generator, count: int, size_range=(4, 12),
                   canvas=(128, 128), separation: int = 2, distractors: int = 0,
                   class_label: int = 1, distractor_label: int = 2,
                   label_stride: int = DEFAULT_CHANNELS, max_tries: int = 200,
                   max_restarts: int = 20) -> Scene:
    lo, hi = size_range
    h, w = canvas
    if count < 0 or distractors < 0 or not 1 <= lo <= hi:
        raise ConfigError(f"invalid count {count} or size range {size_range}")
    if hi > min(h, w):
        raise GenError(f"objects up to {hi}px do not fit a {h}x{w} canvas")
    total = count + distractors
    if total * (lo + separation) ** 2 > (h + separation) * (w + separation):
        raise GenError(f"{total} objects of side >= {lo} cannot fit a {h}x{w} canvas")
    if (class_label + max(count - 1, 0) * label_stride > 0xFFFF
            or distractor_label + max(distractors - 1, 0) * label_stride > 0xFFFF):
        raise GenError("labels overflow 16 bits")

    for _ in range(max_restarts):
        placed: List[Box] = []
        for _ in range(total):
            for _ in range(max_tries):
                bw, bh = rng.integers(lo, hi + 1, size=2)
                x1 = int(rng.integers(0, w - bw + 1))
                y1 = int(rng.integers(0, h - bh + 1))
                box = Box(x1, y1, x1 + int(bw) - 1, y1 + int(bh) - 1)
                if _clear(box, placed, separation):
                    placed.append(box)
                    break
            else:
                break
        if len(placed) == total:
            break
    else:
        raise GenError(f"could not pack {total} objects into {h}x{w} after {max_restarts} restarts")

    labels = np.zeros((h, w), dtype=np.int64)
    objects, extras = [], []
    for k, box in enumerate(placed):
        if k < count:
            label = class_label + k * label_stride
            objects.append((label, box))
        else:
            label = distractor_label + (k - count) * label_stride
            extras.append((label, box))
        labels[box.y1:box.y2 + 1, box.x1:box.x2 + 1] = label
    return Scene(labels, objects, extras)


def generate_dataset(n_scenes: int, count_range=(1, 30), size_range=(4, 12), seed: int = 0,
                     outdir=".", canvas=(128, 128), separation: int = 2,
                     distractors: int = 0, n_exemplars: int = 3) -> List[dict]:
    """Write ``scene_NNNN.png`` label maps plus ``annotations.json`` to ``outdir``."""
    if n_scenes < 0 or not 0 <= count_range[0] <= count_range[1]:
        raise ConfigError(f"invalid scene count {n_scenes} or count range {count_range}")
    os.makedirs(outdir, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_scenes):
        count = int(rng.integers(count_range[0], count_range[1] + 1))
        scene = generate_scene(rng, count, size_range, canvas, separation, distractors)
        name = f"scene_{i:04d}.png"
        save_label_map(scene.labels, os.path.join(outdir, name))
        records.append({
            "image": name,
            "exemplar_boxes": [b.as_list() for b in scene.exemplars(n_exemplars)],
            "points": scene.points(),
        })
    with open(os.path.join(outdir, "annotations.json"), "w") as fh:
        json.dump(records, fh, indent=1)
        fh.write("\n")
    return records
