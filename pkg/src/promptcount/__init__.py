"""Training-free, exemplar-prompted object counting."""

from .core import Box, PointPrompt
from .counter import CountingConfig, CountResult, iterate_count
from .errors import (
    BackendError,
    ConfigError,
    CountingError,
    EmptyExemplar,
    EmptyMask,
    EvalError,
    GenError,
    ParseError,
    ShapeError,
)

__all__ = [
    "BackendError",
    "Box",
    "ConfigError",
    "CountResult",
    "CountingConfig",
    "CountingError",
    "EmptyExemplar",
    "EmptyMask",
    "EvalError",
    "GenError",
    "ParseError",
    "PointPrompt",
    "ShapeError",
    "iterate_count",
]
