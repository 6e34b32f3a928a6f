"""Label-attention representations.

Intent representation: each token attends over the slot label embeddings,
``H_I = [softmax(H E_S^T) E_S, H]``. Slot representation mirrors it with the
intent label embeddings. The sentence embedding ``c`` is the token mean of
``H_I`` and ``z`` the token mean of ``H``.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from protojoint.diffcore import DiffGraph, Node
from protojoint.types import Interaction, Matrix

log = logging.getLogger(__name__)

INTERACTIONS: tuple[Interaction, ...] = ("both", "slot_to_intent", "intent_to_slot", "none")


@dataclass
class JointRepresentations:
    """Per-token and per-utterance representations of one batch.

    Attributes:
        h: Encoder states, ``Ntok x d``.
        h_intent: Intent representation ``H_I`` (``2d`` columns, or ``H`` when disabled).
        h_slot: Slot representation ``H_S`` (``2d`` columns, or ``H`` when disabled).
        sentence: One ``c`` row per utterance.
        z: One ``z`` row per utterance.
    """

    h: Node
    h_intent: Node
    h_slot: Node
    sentence: Node
    z: Node


def attend(graph: DiffGraph, h: Node, labels: Node, name: str = "") -> Node:
    """``[softmax(H E^T) E, H]`` with the softmax taken over labels."""
    weights = graph.row_softmax(graph.inner(h, labels, f"{name} logits"), f"{name} attention")
    return graph.concat_cols([graph.matmul(weights, labels), h], name)


def intent_representation(graph: DiffGraph, h: Node, slot_labels: Node) -> Node:
    return attend(graph, h, slot_labels, "H_I")


def slot_representation(graph: DiffGraph, h: Node, intent_labels: Node) -> Node:
    return attend(graph, h, intent_labels, "H_S")


def averaging_matrix(spans: Sequence[tuple[int, int]], token_count: int) -> Matrix:
    """Row ``u`` averages the token rows of span ``u``."""
    matrix = np.zeros((len(spans), token_count))
    for row, (start, end) in enumerate(spans):
        matrix[row, start:end] = 1.0 / (end - start)
    return matrix


def sentence_embedding(graph: DiffGraph, h_intent: Node, spans: Sequence[tuple[int, int]] | None = None) -> Node:
    """Column-wise token mean, one row per span (a single ``1 x cols`` row without spans)."""
    if spans is None:
        return graph.col_mean(h_intent, "c")
    return graph.matmul(graph.constant(averaging_matrix(spans, h_intent.shape[0]), "span mean"), h_intent, "c")


def represent(
    graph: DiffGraph,
    h: Node,
    spans: Sequence[tuple[int, int]],
    intent_labels: Node,
    slot_labels: Node,
    interaction: Interaction = "both",
) -> JointRepresentations:
    """Build ``H_I``, ``H_S``, ``c`` and ``z`` for a stacked batch.

    A direction switched off by ``interaction`` uses ``H`` unchanged.
    """
    if interaction not in INTERACTIONS:
        raise ValueError(f"unknown interaction {interaction!r}")

    h_intent = intent_representation(graph, h, slot_labels) if interaction in ("both", "slot_to_intent") else h
    h_slot = slot_representation(graph, h, intent_labels) if interaction in ("both", "intent_to_slot") else h

    mean = graph.constant(averaging_matrix(spans, h.shape[0]), "span mean")
    return JointRepresentations(
        h=h,
        h_intent=h_intent,
        h_slot=h_slot,
        sentence=graph.matmul(mean, h_intent, "c"),
        z=graph.matmul(mean, h, "z"),
    )
