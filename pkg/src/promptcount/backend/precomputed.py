from __future__ import annotations

from typing import List, Sequence

from ..core import Box, PointPrompt
from ..errors import BackendError
from .base import Backend, ImageEmbedding, MaskRecord, SourceImage


class PrecomputedBackend(Backend):
    """Reads embeddings from flat-binary files and delegates decoding.

    ``embedding_for`` maps an image id to its embedding file; a plain path
    applies to every image.
    """

    def __init__(self, embedding_for, decoder: Backend):
        self.embedding_for = embedding_for
        self.decoder = decoder
        self.concurrent = decoder.concurrent

    def _path(self, image: SourceImage):
        if callable(self.embedding_for):
            return self.embedding_for(image.id)
        return self.embedding_for

    def encode(self, image: SourceImage) -> ImageEmbedding:
        from ..io import read_embedding

        path = self._path(image)
        try:
            return read_embedding(path, image.height, image.width)
        except OSError as exc:
            raise BackendError(f"cannot read embedding {path}: {exc}") from exc

    def decode_box(self, embedding: ImageEmbedding, image: SourceImage,
                   box: Box) -> MaskRecord:
        return self.decoder.decode_box(embedding, image, box)

    def decode_points(self, embedding: ImageEmbedding, image: SourceImage,
                      points: Sequence[PointPrompt]) -> List[MaskRecord]:
        return self.decoder.decode_points(embedding, image, points)
