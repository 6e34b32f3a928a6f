from __future__ import annotations

from typing import Any, Literal, TypeAlias, TypedDict

import numpy as np
import numpy.typing as npt
from typing_extensions import NotRequired

Value: TypeAlias = Any
Options: TypeAlias = "dict[str, Any]"
Row: TypeAlias = dict[str, Any]
FormatterResult: TypeAlias = str
Matrix: TypeAlias = npt.NDArray[np.float64]

Mode: TypeAlias = Literal["oo", "wo", "ww"]
Interaction: TypeAlias = Literal["both", "slot_to_intent", "intent_to_slot", "none"]
WindowNorm: TypeAlias = Literal["actual", "fixed"]
SclSource: TypeAlias = Literal["h", "h_s"]

OUTSIDE = "O"


class UtteranceRecord(TypedDict):
    """One line of a corpus file.

    Attributes:
        tokens: Pre-tokenized words.
        intent: Intent label of the whole utterance.
        slots: BIO slot label per token.
        id: (Optional) Stable utterance identifier.
    """

    tokens: list[str]
    intent: str
    slots: list[str]
    id: NotRequired[int]


class SeedTraceRecord(TypedDict):
    stream_seed: int
    index: int
    n_way: int
    classes: list[str]
    beta: float
    alphas: dict[str, float]
    retries: int


class EpisodeRecord(TypedDict):
    class_set: list[str]
    k_q: int
    shots: dict[str, int]
    slot_label_set: list[str]
    support: dict[str, list[UtteranceRecord]]
    query: dict[str, list[UtteranceRecord]]
    seed_trace: SeedTraceRecord


class MeanStd(TypedDict):
    mean: float
    std: float
