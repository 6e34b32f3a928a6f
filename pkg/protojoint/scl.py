"""Supervised contrastive losses between query and support vectors.

For a query ``i`` with label ``y`` and ``N_y`` support items of that label::

    L = (1/|Q|) sum_i -(1/N_y) sum_{j: y_j = y} log softmax_j(q_i . s_j / tau)

Queries without a positive support item contribute 0 but still count in
``|Q|``; they are reported as skipped. The softmax runs over all support
items and is stabilized by subtracting the row maximum.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from protojoint.diffcore import DiffGraph, Node
from protojoint.exceptions import ConfigError, ShapeError
from protojoint.types import OUTSIDE, Matrix

log = logging.getLogger(__name__)


@dataclass
class ContrastiveBatch:
    """Labeled query and support vectors.

    Attributes:
        query_vecs: ``|Q| x dim`` query vectors.
        query_labels: Label per query row.
        support_vecs: ``|S| x dim`` support vectors.
        support_labels: Label per support row.
        tau: Temperature, strictly positive.
    """

    query_vecs: Matrix
    query_labels: list[str]
    support_vecs: Matrix
    support_labels: list[str]
    tau: float = 0.1

    def __post_init__(self):
        self.query_vecs = np.atleast_2d(np.asarray(self.query_vecs, dtype=np.float64))
        self.support_vecs = np.atleast_2d(np.asarray(self.support_vecs, dtype=np.float64))
        check_tau(self.tau)

        if len(self.query_labels) != self.query_vecs.shape[0]:
            raise ShapeError("one label per query vector expected")
        if len(self.support_labels) != self.support_vecs.shape[0]:
            raise ShapeError("one label per support vector expected")
        if self.query_vecs.shape[1] != self.support_vecs.shape[1]:
            raise ShapeError("query and support vectors differ in dimension")

    @property
    def counts(self) -> dict[str, int]:
        return dict(Counter(self.support_labels))

    def without(self, label: str) -> ContrastiveBatch:
        """Drop every query and support item carrying ``label``."""
        keep_q = [i for i, y in enumerate(self.query_labels) if y != label]
        keep_s = [j for j, y in enumerate(self.support_labels) if y != label]
        dim = self.query_vecs.shape[1]
        return ContrastiveBatch(
            self.query_vecs[keep_q].reshape(len(keep_q), dim),
            [self.query_labels[i] for i in keep_q],
            self.support_vecs[keep_s].reshape(len(keep_s), dim),
            [self.support_labels[j] for j in keep_s],
            self.tau,
        )


@dataclass
class SclResult:
    """A contrastive loss node with its bookkeeping.

    Attributes:
        loss: ``1 x 1`` loss node.
        skipped: Queries that contributed nothing (no positive support or excluded label).
        queries: Queries in the normalizer ``|Q|``.
    """

    loss: Node
    skipped: int
    queries: int


def check_tau(tau: float) -> None:
    if not tau > 0:
        raise ConfigError("tau must be positive")


def contrastive_loss(
    graph: DiffGraph,
    queries: Node,
    support: Node,
    query_labels: Sequence[str],
    support_labels: Sequence[str],
    tau: float,
    normalize: bool = False,
    name: str = "L_scl",
) -> SclResult:
    """Graph form of the supervised contrastive loss."""
    check_tau(tau)

    if normalize:
        queries = graph.normalize_rows(queries)
        support = graph.normalize_rows(support)

    counts = Counter(support_labels)
    total = len(query_labels)
    rows: list[int] = []
    cols: list[int] = []
    weights: list[float] = []
    skipped = 0

    for i, label in enumerate(query_labels):
        positives = counts.get(label, 0)
        if not positives:
            skipped += 1
            continue
        for j, other in enumerate(support_labels):
            if other == label:
                rows.append(i)
                cols.append(j)
                weights.append(-1.0 / (positives * total))

    if not rows:
        return SclResult(graph.constant(np.zeros((1, 1)), name), skipped, total)

    log_probs = graph.row_log_softmax(graph.scale(graph.inner(queries, support), 1.0 / tau), f"{name} log p")
    picked = graph.pick(log_probs, rows, cols)
    weighted = graph.mul(picked, graph.constant(np.array(weights).reshape(-1, 1)))
    return SclResult(graph.sum(weighted, name), skipped, total)


def ic_scl(
    graph: DiffGraph,
    z: Node,
    support: Sequence[int],
    query: Sequence[int],
    labels: Sequence[str],
    tau: float,
    normalize: bool = False,
) -> SclResult:
    """Intent contrastive loss over sentence vectors ``z`` (rows indexed by utterance)."""
    return contrastive_loss(
        graph,
        graph.gather_rows(z, query, "z query"),
        graph.gather_rows(z, support, "z support"),
        [labels[u] for u in query],
        [labels[u] for u in support],
        tau,
        normalize,
        "L_IC_scl",
    )


def sf_scl(
    graph: DiffGraph,
    tokens: Node,
    support_tokens: Sequence[tuple[int, str]],
    query_tokens: Sequence[tuple[int, str]],
    tau: float,
    normalize: bool = False,
) -> SclResult:
    """Slot contrastive loss over token rows; ``O`` tokens are left out on both sides.

    Every token occurrence is a distinct item. Skipped counts include the
    dropped ``O`` query tokens.
    """
    query_items = [(row, label) for row, label in query_tokens if label != OUTSIDE]
    support_items = [(row, label) for row, label in support_tokens if label != OUTSIDE]
    outside = len(query_tokens) - len(query_items)

    if not query_items or not support_items:
        return SclResult(graph.constant(np.zeros((1, 1)), "L_SF_scl"), len(query_tokens), len(query_items))

    result = contrastive_loss(
        graph,
        graph.gather_rows(tokens, [row for row, _ in query_items], "h query"),
        graph.gather_rows(tokens, [row for row, _ in support_items], "h support"),
        [label for _, label in query_items],
        [label for _, label in support_items],
        tau,
        normalize,
        "L_SF_scl",
    )
    result.skipped += outside
    return result


def _batch_loss(batch: ContrastiveBatch, normalize: bool) -> tuple[float, int]:
    graph = DiffGraph()
    result = contrastive_loss(
        graph,
        graph.constant(batch.query_vecs),
        graph.constant(batch.support_vecs),
        batch.query_labels,
        batch.support_labels,
        batch.tau,
        normalize,
    )
    return graph.scalar(result.loss), result.skipped


def ic_scl_loss(batch: ContrastiveBatch, normalize: bool = False) -> tuple[float, int]:
    """Intent contrastive loss of a batch of sentence vectors; returns ``(loss, skipped)``."""
    return _batch_loss(batch, normalize)


def sf_scl_loss(batch: ContrastiveBatch, normalize: bool = False) -> tuple[float, int]:
    """Slot contrastive loss of a batch of token vectors with ``O`` items removed."""
    outside = sum(label == OUTSIDE for label in batch.query_labels)
    kept = batch.without(OUTSIDE)

    if not kept.query_labels or not kept.support_labels:
        return 0.0, len(batch.query_labels)

    loss, skipped = _batch_loss(kept, normalize)
    return loss, skipped + outside


@dataclass(frozen=True)
class SclDecomposition:
    """Split of the loss into an alignment part and a normalization part.

    ``reconstructed = logz_term - positive_term`` must equal ``direct``.
    """

    positive_term: float
    logz_term: float
    reconstructed: float
    direct: float

    @property
    def error(self) -> float:
        return abs(self.reconstructed - self.direct)


def scl_decomposition_check(batch: ContrastiveBatch) -> SclDecomposition:
    """Recompute the loss as ``logZ term - positive term`` and compare with the graph value.

    ``positive_term = (1/|Q|) sum_i (1/N_i) sum_j q_i . s_j / tau`` over positives and
    ``logz_term = (1/|Q|) sum_i log sum_k exp(q_i . s_k / tau)`` over queries with positives.
    """
    counts = batch.counts
    logits = batch.query_vecs @ batch.support_vecs.T / batch.tau
    total = len(batch.query_labels)

    positive_term = 0.0
    logz_term = 0.0

    for i, label in enumerate(batch.query_labels):
        positives = counts.get(label, 0)
        if not positives:
            continue

        mask = np.array([other == label for other in batch.support_labels])
        peak = logits[i].max()
        log_z = peak + np.log(np.exp(logits[i] - peak).sum())

        positive_term += logits[i][mask].sum() / positives / total
        logz_term += log_z / total

    direct, _ = _batch_loss(batch, normalize=False)
    return SclDecomposition(positive_term, logz_term, logz_term - positive_term, direct)
