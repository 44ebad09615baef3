from .base import EXEMPLAR, Backend, ImageEmbedding, MaskRecord, SourceImage
from .mock import MockBackend
from .model_file import ModelFileBackend
from .precomputed import PrecomputedBackend

__all__ = [
    "EXEMPLAR",
    "Backend",
    "ImageEmbedding",
    "MaskRecord",
    "MockBackend",
    "ModelFileBackend",
    "PrecomputedBackend",
    "SourceImage",
]
