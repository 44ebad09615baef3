"""Exception hierarchy shared by every module."""


class CountingError(Exception):
    """Base class for all package errors."""

    kind = "pipeline"


class ConfigError(CountingError, ValueError):
    kind = "config"


class ShapeError(CountingError, ValueError):
    kind = "shape"


class EmptyMask(CountingError, ValueError):
    kind = "empty_mask"


class EmptyExemplar(CountingError):
    """No usable object could be segmented from an exemplar prompt."""

    kind = "empty_exemplar"


class BackendError(CountingError):
    kind = "backend"


class EvalError(CountingError):
    kind = "eval"


class ParseError(CountingError, ValueError):
    kind = "parse"

    def __init__(self, message, index=None):
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)
        self.index = index


class GenError(CountingError):
    kind = "gen"
