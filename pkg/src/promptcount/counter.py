"""Prompt-aware counting and the multi-round recall loop.

One round decodes every prompt box into an exemplar mask, builds the
similarity maps, fuses them into a composite map, binarizes it and turns the
foreground into two kinds of point prompts (a lattice over the foreground and
one point per still-uncovered blob).  Decoded masks accumulate in a mask
stack; their bounding boxes that do not match any existing prompt box become
prompts for the next round.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backend.base import Backend, ImageEmbedding, MaskRecord, SourceImage
from .core import (
    MATRIX,
    RESIDUAL,
    Box,
    PointPrompt,
    cell_to_pixel,
    check_unit,
    connected_components,
    downsample_mask,
    iou,
    normalize_map,
    threshold_map,
)
from .errors import ConfigError, EmptyExemplar
from .similarity import SimilaritySet, similarity_set

FUSIONS = ("mean", "max")


@dataclass(frozen=True)
class CountingConfig:
    lam: float = 0.5
    bg_sign: int = 1
    fusion: str = "mean"
    t1: float = 0.35
    t2: float = 0.55
    fg_cutoff: float = 0.5
    rounds_cap: int = 3
    novelty_iou: float = 0.5
    dedup_iou: float = 0.8
    matrix_stride: int = 1
    batch_size: int = 64
    enable_background: bool = True
    enable_multiround: bool = True
    enable_residual: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.bg_sign not in (1, -1):
            raise ConfigError(f"bg_sign must be +1 or -1, got {self.bg_sign}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        for name in ("t1", "t2", "fg_cutoff", "novelty_iou", "dedup_iou"):
            check_unit(getattr(self, name), name)
        for name in ("rounds_cap", "matrix_stride", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PromptStack:
    """Prompt boxes with the round that introduced each one."""

    boxes: List[Box] = field(default_factory=list)
    rounds: List[int] = field(default_factory=list)

    def __len__(self):
        return len(self.boxes)

    def is_novel(self, box: Box, novelty_iou: float) -> bool:
        return all(iou(box, b) < novelty_iou for b in self.boxes)

    def add(self, box: Box, round_idx: int, novelty_iou: float) -> bool:
        if not self.is_novel(box, novelty_iou):
            return False
        self.boxes.append(box)
        self.rounds.append(round_idx)
        return True


def _mask_key(mask: np.ndarray) -> bytes:
    return hashlib.blake2b(np.packbits(mask).tobytes() + repr(mask.shape).encode(),
                           digest_size=16).digest()


def _dup_of(rec: MaskRecord, key: bytes, kept: Sequence[MaskRecord],
            kept_keys: Dict[bytes, int], dedup_iou: float) -> bool:
    # Same content means IoU 1, which always reaches the threshold.
    if key in kept_keys:
        return True
    box, area = rec.box, rec.area
    for other in kept:
        ob = other.box
        x1, y1 = max(box.x1, ob.x1), max(box.y1, ob.y1)
        x2, y2 = min(box.x2, ob.x2), min(box.y2, ob.y2)
        if x1 > x2 or y1 > y2:
            inter = 0
        else:
            inter = int(np.count_nonzero(rec.mask[y1:y2 + 1, x1:x2 + 1]
                                         & other.mask[y1:y2 + 1, x1:x2 + 1]))
        if inter / (area + other.area - inter) >= dedup_iou:
            return True
    return False


class MaskStack:
    """Append-only record list with an incrementally maintained dedup view.

    Greedy dedup over the concatenated records is order-dependent only through
    earlier records, so deduplicating each appended batch against the records
    already kept gives the same result as one pass over the whole stack.
    """

    def __init__(self, dedup_iou: float = 0.8):
        self.dedup_iou = dedup_iou
        self.records: List[MaskRecord] = []
        self.kept: List[MaskRecord] = []
        self._kept_keys: Dict[bytes, int] = {}

    def __len__(self):
        return len(self.records)

    def extend(self, records: Sequence[MaskRecord]) -> int:
        """Append records; returns how many survived deduplication."""
        added = 0
        keys: Dict[int, bytes] = {}
        for rec in records:
            self.records.append(rec)
            key = keys.get(id(rec.mask))
            if key is None:
                key = keys[id(rec.mask)] = _mask_key(rec.mask)
            if not _dup_of(rec, key, self.kept, self._kept_keys, self.dedup_iou):
                self._kept_keys[key] = len(self.kept)
                self.kept.append(rec)
                added += 1
        return added

    def coverage(self, shape) -> np.ndarray:
        covered = np.zeros(shape, dtype=bool)
        for rec in self.kept:
            covered |= rec.mask
        return covered


def dedup_masks(records: Sequence[MaskRecord], dedup_iou: float) -> List[MaskRecord]:
    stack = MaskStack(dedup_iou)
    stack.extend(records)
    return list(stack.kept)


def foreground_fraction(binary) -> float:
    binary = np.asarray(binary, dtype=bool)
    if binary.size == 0:
        return 0.0
    return np.count_nonzero(binary) / binary.size


def foreground_term(fsims: Sequence[np.ndarray], fusion: str) -> np.ndarray:
    stacked = np.stack(fsims)
    if fusion == "mean":
        return stacked.mean(axis=0)
    if fusion == "max":
        return stacked.max(axis=0)
    raise ConfigError(f"unknown fusion {fusion!r}")


def effective_lambda(fg: np.ndarray, cfg: CountingConfig) -> float:
    if not cfg.enable_background:
        return 0.0
    # large foregrounds skip background fusion so small objects survive
    if foreground_fraction(threshold_map(fg, cfg.t2)) > cfg.fg_cutoff:
        return 0.0
    return cfg.lam


def fuse(sims: SimilaritySet, cfg: CountingConfig) -> Tuple[np.ndarray, float]:
    """Unnormalized composite map and the background weight actually used."""
    fg = foreground_term(sims.fsims, cfg.fusion)
    lam = effective_lambda(fg, cfg)
    if lam == 0.0:
        return fg, 0.0
    return fg + cfg.bg_sign * lam * sims.bsim, lam


def composite_similarity(sims: SimilaritySet, cfg: CountingConfig) -> np.ndarray:
    return normalize_map(fuse(sims, cfg)[0])


def matrix_point_prompts(binary, stride: int = 1, image_shape=None) -> List[PointPrompt]:
    binary = np.asarray(binary, dtype=bool)
    image_shape = image_shape or binary.shape
    lattice = np.zeros_like(binary)
    lattice[::stride, ::stride] = True
    ys, xs = np.nonzero(binary & lattice)
    return [PointPrompt(*cell_to_pixel(x, y, binary.shape, image_shape), MATRIX)
            for y, x in zip(ys.tolist(), xs.tolist())]


def residual_point_prompts(binary, covered, image_shape=None) -> List[PointPrompt]:
    """One point per uncovered foreground blob, at its cell nearest the centroid."""
    binary = np.asarray(binary, dtype=bool)
    covered = np.asarray(covered, dtype=bool)
    if binary.shape != covered.shape:
        raise ConfigError(f"coverage {covered.shape} does not match foreground {binary.shape}")
    image_shape = image_shape or binary.shape
    points = []
    for comp in connected_components(binary & ~covered):
        ys, xs = np.nonzero(comp)
        d2 = (ys - ys.mean()) ** 2 + (xs - xs.mean()) ** 2
        i = int(np.argmin(d2))
        points.append(PointPrompt(*cell_to_pixel(int(xs[i]), int(ys[i]), binary.shape, image_shape),
                                  RESIDUAL))
    return points


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


@dataclass
class RoundInfo:
    round: int
    prompts: int
    exemplar_masks: int
    lambda_eff: float
    fg_fraction: float
    background_empty: bool
    matrix_points: int
    residual_points: int
    dropped_points: int
    stack_size: int
    kept_size: int
    added: int
    new_boxes: List[List[int]] = field(default_factory=list)


def _decode(backend, embedding, image, points, cfg, round_idx):
    records = []
    for batch in _batches(points, cfg.batch_size):
        for rec in backend.decode_points(embedding, image, batch):
            rec.round = round_idx
            records.append(rec)
    return records


def round_once(embedding: ImageEmbedding, image: SourceImage, prompts: PromptStack,
               stack: MaskStack, cfg: CountingConfig, backend: Backend,
               round_idx: int = 0, include_exemplars: bool = True):
    """Run one counting round, appending decoded masks to ``stack`` in place.

    Returns ``(stack, csim, binary, info)`` where ``csim`` is the normalized
    composite map and ``binary`` its thresholded foreground.
    """
    if len(prompts) == 0:
        raise ConfigError("round needs at least one prompt box")
    grid = embedding.grid_shape
    fmasks, exemplar_recs = [], []
    for box, origin_round in zip(prompts.boxes, prompts.rounds):
        try:
            rec = backend.decode_box(embedding, image, box)
        except EmptyExemplar:
            continue
        fmask = downsample_mask(rec.mask, *grid)
        if not fmask.any():
            continue
        fmasks.append(fmask)
        if include_exemplars and origin_round == 0:
            rec.round = round_idx
            exemplar_recs.append(rec)
    if not fmasks:
        raise EmptyExemplar("no prompt box produced a usable exemplar mask")

    sims = similarity_set(embedding, fmasks, cfg.t1)
    raw, lam = fuse(sims, cfg)
    csim = normalize_map(raw)
    binary = threshold_map(csim, cfg.t2)
    fg_frac = foreground_fraction(threshold_map(foreground_term(sims.fsims, cfg.fusion), cfg.t2))

    before = len(stack.kept)
    stack.extend(exemplar_recs)
    matrix = matrix_point_prompts(binary, cfg.matrix_stride, image.shape)
    decoded = _decode(backend, embedding, image, matrix, cfg, round_idx)
    dropped = len(matrix) - len(decoded)
    stack.extend(decoded)

    residual = []
    if cfg.enable_residual:
        covered = downsample_mask(stack.coverage(image.shape), *grid)
        residual = residual_point_prompts(binary, covered, image.shape)
        decoded = _decode(backend, embedding, image, residual, cfg, round_idx)
        dropped += len(residual) - len(decoded)
        stack.extend(decoded)

    info = RoundInfo(
        round=round_idx,
        prompts=len(prompts),
        exemplar_masks=len(fmasks),
        lambda_eff=lam,
        fg_fraction=fg_frac,
        background_empty=sims.background_empty,
        matrix_points=len(matrix),
        residual_points=len(residual),
        dropped_points=dropped,
        stack_size=len(stack),
        kept_size=len(stack.kept),
        added=len(stack.kept) - before,
    )
    return stack, csim, binary, info


def novel_boxes(stack: MaskStack, prompts: PromptStack, novelty_iou: float) -> List[Box]:
    """Bounding boxes of kept masks that match no prompt box nor each other."""
    trial = PromptStack(list(prompts.boxes), list(prompts.rounds))
    new = []
    for rec in stack.kept:
        if trial.add(rec.box, -1, novelty_iou):
            new.append(rec.box)
    return new


@dataclass
class CountResult:
    count: int
    records: List[MaskRecord]
    prompt_boxes: PromptStack
    rounds_run: int
    per_round_added: List[int]
    dropped_background_points: int
    rounds: List[RoundInfo] = field(default_factory=list)
    stack_sizes: List[int] = field(default_factory=list)
    prompt_sizes: List[int] = field(default_factory=list)
    csims: List[np.ndarray] = field(default_factory=list, repr=False)
    stack: Optional[MaskStack] = field(default=None, repr=False)

    def to_dict(self, include_masks: bool = True) -> dict:
        out = {
            "count": self.count,
            "rounds_run": self.rounds_run,
            "per_round_added": list(self.per_round_added),
            "dropped_background_points": self.dropped_background_points,
            "prompt_boxes": [{"box": b.as_list(), "round": r}
                             for b, r in zip(self.prompt_boxes.boxes, self.prompt_boxes.rounds)],
        }
        if include_masks:
            out["masks"] = [{"origin": rec.origin, "round": rec.round, "box": rec.box.as_list(),
                             "area": rec.area, "score": rec.score} for rec in self.records]
        out["trace"] = [asdict(info) for info in self.rounds]
        return out


def iterate_count(image: SourceImage, exemplar_boxes: Sequence[Box], cfg: CountingConfig,
                  backend: Backend, embedding: Optional[ImageEmbedding] = None) -> CountResult:
    if not exemplar_boxes:
        raise ConfigError("need at least one exemplar box")
    for box in exemplar_boxes:
        if not box.fits(image.height, image.width):
            raise ConfigError(f"exemplar box {box.as_list()} outside image {image.shape}")
    if embedding is None:
        embedding = backend.encode(image)

    prompts = PromptStack()
    for box in exemplar_boxes:
        prompts.add(box, 0, cfg.novelty_iou)
    stack = MaskStack(cfg.dedup_iou)
    infos, csims, stack_sizes, prompt_sizes = [], [], [], []
    dropped = 0
    for r in range(cfg.rounds_cap):
        _, csim, _, info = round_once(embedding, image, prompts, stack, cfg, backend, r,
                                      include_exemplars=(r == 0))
        infos.append(info)
        csims.append(csim)
        dropped += info.dropped_points
        stack_sizes.append(len(stack))
        prompt_sizes.append(len(prompts))
        if not cfg.enable_multiround or r + 1 == cfg.rounds_cap:
            break
        new = novel_boxes(stack, prompts, cfg.novelty_iou)
        info.new_boxes = [b.as_list() for b in new]
        if not new:
            break
        for box in new:
            prompts.add(box, r + 1, cfg.novelty_iou)

    return CountResult(
        count=len(stack.kept),
        records=list(stack.kept),
        prompt_boxes=prompts,
        rounds_run=len(infos),
        per_round_added=[info.added for info in infos],
        dropped_background_points=dropped,
        rounds=infos,
        stack_sizes=stack_sizes,
        prompt_sizes=prompt_sizes,
        csims=csims,
        stack=stack,
    )
