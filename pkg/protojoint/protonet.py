"""Prototypes, Euclidean-softmax posteriors and the prototypical losses.

A class prototype is the mean of its support representations. Posteriors
are a softmax over negative squared Euclidean distances to the prototypes.
Slot prototypes and query tokens both use the windowed token mean.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import TypeAlias

import numpy as np

from protojoint.diffcore import DiffGraph, Node
from protojoint.exceptions import EpisodeError
from protojoint.types import OUTSIDE, Matrix, WindowNorm

log = logging.getLogger(__name__)

Vector: TypeAlias = "Sequence[float] | Matrix"


@dataclass
class EpisodeLayout:
    """Row bookkeeping of an episode batch.

    Support utterances come first (in class-set order), then queries.

    Attributes:
        spans: Token row range of every utterance.
        intents: Intent label of every utterance.
        slots: Slot labels of every utterance.
        n_support: Number of leading support utterances.
    """

    spans: list[tuple[int, int]]
    intents: list[str]
    slots: list[tuple[str, ...]]
    n_support: int

    @property
    def support(self) -> range:
        return range(self.n_support)

    @property
    def query(self) -> range:
        return range(self.n_support, len(self.spans))

    @property
    def token_count(self) -> int:
        return self.spans[-1][1] if self.spans else 0

    def tokens_of(self, utterances: Sequence[int]) -> list[tuple[int, str]]:
        """``(row, slot label)`` of every token of the given utterances."""
        result: list[tuple[int, str]] = []
        for u in utterances:
            start = self.spans[u][0]
            result.extend((start + offset, label) for offset, label in enumerate(self.slots[u]))
        return result


def grouping_matrix(groups: Sequence[Sequence[int]], n_cols: int) -> Matrix:
    """Row ``g`` averages the columns listed in ``groups[g]``."""
    matrix = np.zeros((len(groups), n_cols))
    for row, members in enumerate(groups):
        if not members:
            raise EpisodeError(f"group {row} has no members")
        for member in members:
            matrix[row, member] += 1.0 / len(members)
    return matrix


def window_matrix(spans: Sequence[tuple[int, int]], window: int, norm: WindowNorm = "actual") -> Matrix:
    """Block-diagonal ``Ntok x Ntok`` windowed mean.

    Row ``j`` averages rows ``j - window .. j + window`` clipped to the
    utterance. ``actual`` divides by the number of valid rows, ``fixed`` by
    ``2 * window + 1``.
    """
    if window < 0:
        raise ValueError("window must be >= 0")

    token_count = spans[-1][1] if spans else 0
    matrix = np.zeros((token_count, token_count))

    for start, end in spans:
        for j in range(start, end):
            low, high = max(start, j - window), min(end, j + window + 1)
            count = high - low if norm == "actual" else 2 * window + 1
            matrix[j, low:high] = 1.0 / count

    return matrix


def windowed(
    graph: DiffGraph,
    h_slot: Node,
    spans: Sequence[tuple[int, int]],
    window: int,
    norm: WindowNorm = "actual",
) -> Node:
    if window == 0:
        return h_slot
    return graph.matmul(graph.constant(window_matrix(spans, window, norm), "window"), h_slot, "windowed H_S")


def intent_prototypes(graph: DiffGraph, sentence: Node, groups: Sequence[Sequence[int]]) -> Node:
    """One prototype row per class: the mean of its support sentence embeddings.

    Raises:
        EpisodeError: a class has no support utterance.
    """
    if any(not members for members in groups):
        raise EpisodeError("class without support utterances")
    return graph.matmul(graph.constant(grouping_matrix(groups, sentence.shape[0]), "class mean"), sentence, "p_c")


def slot_prototypes(graph: DiffGraph, tokens: Node, groups: Sequence[Sequence[int]]) -> Node:
    """One prototype row per slot label: the mean of its windowed support token rows."""
    if not groups:
        raise EpisodeError("no slot prototypes")
    return graph.matmul(graph.constant(grouping_matrix(groups, tokens.shape[0]), "slot mean"), tokens, "p_o")


def log_posterior(graph: DiffGraph, x: Node, prototypes: Node, name: str = "") -> Node:
    """Row-wise ``log softmax(-||x - p||^2)`` over prototypes."""
    return graph.row_log_softmax(graph.scale(graph.sq_dist(x, prototypes), -1.0), name)


@dataclass
class EpisodePosteriors:
    """Prototype posteriors of every query of an episode.

    Attributes:
        intent_log_probs: ``|Q| x N`` log posteriors in class-set order.
        slot_log_probs: ``query tokens x |slot prototypes|`` log posteriors.
        slot_labels: Labels owning a slot prototype, in episode order.
        query_tokens: ``(row, label)`` of every query token, gold labels when known.
    """

    intent_log_probs: Node
    slot_log_probs: Node
    slot_labels: tuple[str, ...]
    query_tokens: list[tuple[int, str]]


@dataclass
class PNResult:
    """Prototypical losses of an episode.

    Attributes:
        ic_loss: Mean query negative log-likelihood of the gold intent.
        sf_loss: Per-query sum of gold slot negative log-likelihoods, averaged over queries.
        unscorable_tokens: Query tokens whose gold label has no prototype.
    """

    ic_loss: Node
    sf_loss: Node
    unscorable_tokens: int


def episode_posteriors(
    graph: DiffGraph,
    sentence: Node,
    h_slot: Node,
    layout: EpisodeLayout,
    class_set: Sequence[str],
    slot_label_set: Sequence[str],
    window: int = 1,
    norm: WindowNorm = "actual",
) -> EpisodePosteriors:
    """Build support prototypes and score every query utterance and token.

    Only support labels are read, so query labels may be unknown.
    """
    groups = [[u for u in layout.support if layout.intents[u] == c] for c in class_set]
    intent_protos = intent_prototypes(graph, sentence, groups)

    queries = list(layout.query)
    query_rows = graph.gather_rows(sentence, queries, "c query")
    intent_log_probs = log_posterior(graph, query_rows, intent_protos, "log p(y)")

    tokens = windowed(graph, h_slot, layout.spans, window, norm)
    support_tokens = layout.tokens_of(layout.support)
    slot_groups: dict[str, list[int]] = {label: [] for label in slot_label_set}
    for row, label in support_tokens:
        if label in slot_groups:
            slot_groups[label].append(row)

    slot_labels = tuple(label for label in slot_label_set if slot_groups[label])
    slot_protos = slot_prototypes(graph, tokens, [slot_groups[label] for label in slot_labels])

    query_tokens = layout.tokens_of(queries)
    query_token_rows = graph.gather_rows(tokens, [row for row, _ in query_tokens], "query tokens")
    slot_log_probs = log_posterior(graph, query_token_rows, slot_protos, "log p(t)")

    return EpisodePosteriors(intent_log_probs, slot_log_probs, slot_labels, query_tokens)


def pn_losses(
    graph: DiffGraph,
    posteriors: EpisodePosteriors,
    layout: EpisodeLayout,
    class_set: Sequence[str],
) -> PNResult:
    """Intent and slot prototypical losses over the episode queries.

    Query tokens whose gold label owns no prototype are left out of the slot
    loss and counted as unscorable.
    """
    class_index = {c: i for i, c in enumerate(class_set)}
    queries = list(layout.query)

    gold = [class_index[layout.intents[u]] for u in queries]
    ic_sum = graph.sum(graph.pick(posteriors.intent_log_probs, range(len(queries)), gold))
    ic_loss = graph.scale(ic_sum, -1.0 / len(queries), "L_IC_pn")

    slot_index = {label: i for i, label in enumerate(posteriors.slot_labels)}
    scorable = [(k, slot_index[label]) for k, (_, label) in enumerate(posteriors.query_tokens) if label in slot_index]
    unscorable = len(posteriors.query_tokens) - len(scorable)

    if scorable:
        rows = [k for k, _ in scorable]
        cols = [col for _, col in scorable]
        sf_sum = graph.sum(graph.pick(posteriors.slot_log_probs, rows, cols))
        sf_loss = graph.scale(sf_sum, -1.0 / len(queries), "L_SF_pn")
    else:
        sf_loss = graph.constant(np.zeros((1, 1)), "L_SF_pn")

    if unscorable:
        log.debug("%d query tokens have no slot prototype", unscorable)

    return PNResult(ic_loss, sf_loss, unscorable)


def _posterior(point: Vector, prototypes: Mapping[str, Vector]) -> dict[str, float]:
    if not prototypes:
        raise EpisodeError("no prototypes")

    labels = list(prototypes)
    graph = DiffGraph()
    x = graph.constant(np.asarray(point, dtype=np.float64).reshape(1, -1))
    p = graph.constant(np.stack([np.asarray(prototypes[label], dtype=np.float64).reshape(-1) for label in labels]))
    probs = np.exp(graph.value(log_posterior(graph, x, p)))[0]
    return dict(zip(labels, probs.tolist(), strict=True))


def intent_posterior(c_star: Vector, prototypes: Mapping[str, Vector]) -> dict[str, float]:
    """Probability of each intent for a query sentence embedding."""
    return _posterior(c_star, prototypes)


def slot_posterior(token: Vector, prototypes: Mapping[str, Vector]) -> dict[str, float]:
    """Probability of each slot label for a windowed query token representation."""
    return _posterior(token, prototypes)


def mean_prototypes(vectors: Matrix, labels: Sequence[str]) -> dict[str, Matrix]:
    """Per-label mean of ``vectors`` rows, labels in first-seen order."""
    order = list(dict.fromkeys(labels))
    graph = DiffGraph()
    groups = [[i for i, label in enumerate(labels) if label == c] for c in order]
    protos = graph.value(intent_prototypes(graph, graph.constant(vectors), groups))
    return {c: protos[i] for i, c in enumerate(order)}


def window_prototypes(
    rows: Sequence[Matrix],
    slots: Sequence[Sequence[str]],
    window: int,
    norm: WindowNorm = "actual",
) -> dict[str, Matrix]:
    """Slot prototypes from per-utterance ``T x dim`` representations."""
    spans: list[tuple[int, int]] = []
    start = 0
    for matrix in rows:
        spans.append((start, start + len(matrix)))
        start += len(matrix)

    labels = [label for sequence in slots for label in sequence]
    order = [OUTSIDE] if OUTSIDE in labels else []
    order += sorted(set(labels) - {OUTSIDE})

    graph = DiffGraph()
    tokens = windowed(graph, graph.constant(np.concatenate(rows, axis=0)), spans, window, norm)
    groups = [[i for i, label in enumerate(labels) if label == o] for o in order]
    protos = graph.value(slot_prototypes(graph, tokens, groups))
    return {o: protos[i] for i, o in enumerate(order)}
