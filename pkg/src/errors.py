"""
Exception hierarchy for the skip-run engine.
Every error raised on purpose by the package derives from SkipRunError.
"""


class SkipRunError(Exception):
    """Base class for all engine errors."""


class ShapeError(SkipRunError, ValueError):
    """Tensor dimensions do not agree."""


class DomainError(SkipRunError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ConfigError(SkipRunError, ValueError):
    """Invalid model, skip or run configuration."""


class SpecParseError(ConfigError):
    """Skip-spec text could not be parsed."""

    def __init__(self, message: str, token: str = ""):
        super().__init__(message)
        self.token = token


class InputError(SkipRunError, ValueError):
    """Bad user data: token ids, prompts, corpora, task files."""


class CapacityError(SkipRunError, RuntimeError):
    """KV cache would grow past max_seq_len."""


class UndefinedSimilarityError(SkipRunError, ArithmeticError):
    """Cosine similarity requested for a (near) zero-norm vector."""


class CheckpointError(SkipRunError, IOError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class VersionMismatchError(CheckpointError):
    def __init__(self, message: str, version: int):
        super().__init__(message)
        self.version = version


class TruncatedCheckpointError(CheckpointError):
    """File ended before a header field or tensor payload was complete."""


class CheckpointStructureError(CheckpointError):
    """Tensors missing, duplicated or inconsistent with the stored config."""


class SchemaError(SkipRunError, ValueError):
    """An emitted report file does not match its declared CSV schema."""
