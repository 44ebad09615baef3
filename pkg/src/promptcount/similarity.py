"""Exemplar-driven foreground and background similarity maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .backend.base import ImageEmbedding
from .core import as_mask, normalize_map, check_unit
from .errors import ConfigError, EmptyExemplar, ShapeError


@dataclass(frozen=True)
class MaskedEmbedding:
    values: np.ndarray  # (C, He, We), zero outside the mask
    k: int  # number of set mask cells


@dataclass
class SimilaritySet:
    fsims: List[np.ndarray]
    bmask: np.ndarray
    bsim: np.ndarray
    background_empty: bool = False

    @property
    def n(self) -> int:
        return len(self.fsims)


def _features(embedding) -> np.ndarray:
    return embedding.values if isinstance(embedding, ImageEmbedding) else np.asarray(embedding, dtype=np.float64)


def masked_embedding(embedding, fmask) -> MaskedEmbedding:
    values = _features(embedding)
    fmask = as_mask(fmask)
    if fmask.shape != values.shape[1:]:
        raise ShapeError(f"mask {fmask.shape} does not match embedding grid {values.shape[1:]}")
    k = int(np.count_nonzero(fmask))
    if k == 0:
        raise EmptyExemplar("exemplar mask is empty at embedding resolution")
    return MaskedEmbedding(values * fmask[None], k)


def raw_similarity(embedding, masked: MaskedEmbedding) -> np.ndarray:
    """Unnormalized map: each cell's feature dotted with the mean masked feature.

    Summing the pairwise products over all masked cells and dividing by ``k``
    equals one dot product against the mean vector, which is what runs here.
    """
    values = _features(embedding)
    if masked.values.shape != values.shape:
        raise ShapeError("masked embedding shape differs from the embedding")
    mean_vec = masked.values.sum(axis=(1, 2)) / masked.k
    return np.tensordot(mean_vec, values, axes=(0, 0))


def foreground_similarity(embedding, masked: MaskedEmbedding) -> np.ndarray:
    return normalize_map(raw_similarity(embedding, masked))


def mean_similarity(fsims: Sequence[np.ndarray]) -> np.ndarray:
    if len(fsims) == 0:
        raise ConfigError("need at least one similarity map")
    shapes = {np.shape(f) for f in fsims}
    if len(shapes) != 1:
        raise ShapeError(f"similarity maps differ in shape: {sorted(shapes)}")
    return np.mean(np.stack(fsims), axis=0)


def background_mask(mean_fsim, t1: float) -> np.ndarray:
    """Cells whose mean exemplar similarity falls below ``t1``."""
    check_unit(t1, "T1")
    return np.asarray(mean_fsim, dtype=np.float64) < t1


def background_similarity(embedding, bmask):
    """Returns ``(bsim, empty)``; an empty background yields a zero map."""
    values = _features(embedding)
    bmask = as_mask(bmask)
    if not bmask.any():
        return np.zeros(values.shape[1:]), True
    return foreground_similarity(values, masked_embedding(values, bmask)), False


def similarity_set(embedding, fmasks: Sequence[np.ndarray], t1: float) -> SimilaritySet:
    """Foreground maps for every exemplar mask plus the background map."""
    if len(fmasks) == 0:
        raise ConfigError("need at least one exemplar mask")
    values = _features(embedding)
    fsims = [foreground_similarity(values, masked_embedding(values, m)) for m in fmasks]
    bmask = background_mask(mean_similarity(fsims), t1)
    bsim, empty = background_similarity(values, bmask)
    return SimilaritySet(fsims, bmask, bsim, empty)
