from __future__ import annotations

from typing import Any


class ProtojointError(Exception):
    """Base class for every error raised by the package.

    Attributes:
        module: Name of the component the error originates from. The CLI
            prints it as provenance next to the message.
    """

    module: str = "protojoint"

    def __init__(self, message: str, *, module: str | None = None):
        super().__init__(message)
        if module is not None:
            self.module = module


class ValidationError(ProtojointError):
    """Invalid input data or configuration. Maps to CLI exit code 1."""


class RuntimeFailure(ProtojointError):
    """A run failed after its inputs were accepted. Maps to CLI exit code 2."""


class CorpusError(ValidationError):
    module = "corpus"


class SplitError(ValidationError):
    module = "corpus"


class ConfigError(ValidationError):
    module = "config"


class SamplerError(ValidationError):
    module = "sampler"


class RetriesExhaustedError(RuntimeFailure):
    module = "sampler"


class ShapeError(ValidationError):
    module = "diffcore"


class DomainError(RuntimeFailure):
    module = "diffcore"


class CheckpointError(RuntimeFailure):
    module = "checkpoint"


class NonFiniteLossError(RuntimeFailure):
    """Raised when an episode produces a NaN or infinite loss.

    Attributes:
        seed_trace: The sampled randomness of the failing episode, enough to
            replay it.
    """

    module = "trainer"

    def __init__(self, message: str, seed_trace: dict[str, Any]):
        super().__init__(message)
        self.seed_trace = seed_trace


class EpisodeError(ValidationError):
    """An episode cannot be scored, e.g. a class without support utterances."""

    module = "protonet"


class EvaluationError(ValidationError):
    module = "evaluation"
