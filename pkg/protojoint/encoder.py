"""Token encoder: trainable word embeddings followed by a bidirectional LSTM.

Row ``t`` of the hidden matrix is ``[forward_t, backward_t]`` with zero
initial states on both directions, so each row has ``d = 2 * d_h`` columns.
Utterances of equal length are encoded together as one batch.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from dataclasses import field as dataclass_field

import numpy as np

from protojoint.corpus import Corpus
from protojoint.diffcore import DiffGraph, Node
from protojoint.exceptions import CorpusError
from protojoint.types import Matrix

log = logging.getLogger(__name__)

UNK = "<unk>"
GATES = ("i", "f", "o", "c")
DIRECTIONS = ("fwd", "bwd")
EMBEDDING = "embedding"
INIT_SCALE = 0.1
RESERVED_WORDS = ("begin", "inside", "outside")

Describe = Callable[[str], Sequence[str]]


@dataclass
class Vocab:
    """Token to index map. Index 0 is the unknown token."""

    tokens: list[str]
    index: dict[str, int] = dataclass_field(init=False, repr=False)

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != UNK:
            self.tokens = [UNK, *(t for t in self.tokens if t != UNK)]
        self.index = {token: i for i, token in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index.get(token, 0) for token in tokens], dtype=np.intp)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> Vocab:
        return cls([UNK, *sorted(set(words) - {UNK})])


def build_vocab(train: Corpus) -> Vocab:
    """Training tokens, training label description words and the BIO description words."""
    words: set[str] = set(RESERVED_WORDS)
    for utterance in train.utterances:
        words.update(utterance.tokens)
    for label in (*train.intent_inventory, *train.slot_inventory):
        words.update(train.describe(label))
    return Vocab.from_words(words)


def cell_name(direction: str, kind: str, gate: str) -> str:
    return f"lstm.{direction}.{kind}_{gate}"


@dataclass
class EncoderParams:
    """Encoder weights.

    Attributes:
        vocab: Token index.
        d_w: Word embedding size.
        d_h: Hidden size per direction.
        dropout_rate: Element dropout applied to token states in training.
        values: Named parameter arrays: ``embedding`` plus one weight over
            ``[x, h]`` and one bias per gate and direction.
    """

    vocab: Vocab
    d_w: int
    d_h: int
    dropout_rate: float
    values: dict[str, Matrix]

    @property
    def d(self) -> int:
        return 2 * self.d_h

    @classmethod
    def initialize(
        cls,
        vocab: Vocab,
        d_w: int,
        d_h: int,
        dropout_rate: float,
        rng: np.random.Generator,
    ) -> EncoderParams:
        """Uniform(-0.1, 0.1) initialization from ``rng``."""
        values: dict[str, Matrix] = {EMBEDDING: rng.uniform(-INIT_SCALE, INIT_SCALE, (len(vocab), d_w))}

        for direction in DIRECTIONS:
            for gate in GATES:
                values[cell_name(direction, "W", gate)] = rng.uniform(-INIT_SCALE, INIT_SCALE, (d_w + d_h, d_h))
                values[cell_name(direction, "b", gate)] = rng.uniform(-INIT_SCALE, INIT_SCALE, (1, d_h))

        return cls(vocab, d_w, d_h, dropout_rate, values)


@dataclass
class EncodedBatch:
    """Hidden states of several utterances stacked row-wise.

    Attributes:
        h: ``Ntok x d`` node; utterance ``u`` occupies rows ``spans[u]``.
        spans: Half-open ``(start, end)`` row ranges per utterance.
    """

    h: Node
    spans: list[tuple[int, int]]

    @property
    def token_count(self) -> int:
        return self.spans[-1][1] if self.spans else 0


class _Cell:
    def __init__(self, graph: DiffGraph, params: EncoderParams, direction: str):
        self.graph = graph
        self.weights = {
            gate: graph.parameter(cell_name(direction, "W", gate), params.values[cell_name(direction, "W", gate)])
            for gate in GATES
        }
        self.biases = {
            gate: graph.parameter(cell_name(direction, "b", gate), params.values[cell_name(direction, "b", gate)])
            for gate in GATES
        }

    def run(self, inputs: list[Node], batch: int, d_h: int) -> list[Node]:
        graph = self.graph
        rows = np.zeros(batch, dtype=np.intp)
        biases = {gate: graph.gather_rows(bias, rows) for gate, bias in self.biases.items()}

        h = graph.constant(np.zeros((batch, d_h)), "h0")
        c = graph.constant(np.zeros((batch, d_h)), "c0")
        states: list[Node] = []

        for x in inputs:
            xh = graph.concat_cols([x, h])
            pre = {gate: graph.add(graph.matmul(xh, self.weights[gate]), biases[gate]) for gate in GATES}

            i = graph.sigmoid(pre["i"])
            f = graph.sigmoid(pre["f"])
            o = graph.sigmoid(pre["o"])
            candidate = graph.tanh(pre["c"])

            c = graph.add(graph.mul(f, c), graph.mul(i, candidate))
            h = graph.mul(o, graph.tanh(c))
            states.append(h)

        return states


def encode_batch(
    graph: DiffGraph,
    params: EncoderParams,
    utterances: Sequence[Sequence[str]],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> EncodedBatch:
    """Encode token sequences into one stacked hidden matrix.

    Args:
        graph: Graph receiving the encoder parameters and operations.
        params: Encoder weights.
        utterances: Token sequences, each nonempty.
        training: Apply dropout to the hidden matrix.
        rng: Dropout stream, required when training with a positive rate.

    Raises:
        CorpusError: an utterance is empty.
    """
    if not utterances:
        raise CorpusError("nothing to encode")

    for tokens in utterances:
        if not tokens:
            raise CorpusError("empty utterance")

    embedding = graph.parameter(EMBEDDING, params.values[EMBEDDING])
    cells = {direction: _Cell(graph, params, direction) for direction in DIRECTIONS}

    spans: list[tuple[int, int]] = []
    start = 0
    for tokens in utterances:
        spans.append((start, start + len(tokens)))
        start += len(tokens)

    groups: dict[int, list[int]] = defaultdict(list)
    for position, tokens in enumerate(utterances):
        groups[len(tokens)].append(position)

    blocks: list[Node] = []
    # global row of each (group, t, b) block row
    block_rows: list[int] = []

    for length in sorted(groups):
        members = groups[length]
        ids = np.stack([params.vocab.lookup(utterances[m]) for m in members])
        inputs = [graph.gather_rows(embedding, ids[:, t]) for t in range(length)]

        forward = cells["fwd"].run(inputs, len(members), params.d_h)
        backward = cells["bwd"].run(inputs[::-1], len(members), params.d_h)[::-1]

        for t in range(length):
            blocks.append(graph.concat_cols([forward[t], backward[t]]))
            block_rows.extend(spans[m][0] + t for m in members)

    stacked = graph.concat_rows(blocks, "H blocks")
    order = np.empty(len(block_rows), dtype=np.intp)
    order[np.array(block_rows, dtype=np.intp)] = np.arange(len(block_rows))
    h = graph.gather_rows(stacked, order, "H")

    if training and params.dropout_rate > 0:
        if rng is None:
            raise ValueError("dropout requires a random generator")
        keep = 1.0 - params.dropout_rate
        mask = (rng.random(h.shape) < keep) / keep
        h = graph.mul(h, graph.constant(mask, "dropout mask"), "H dropout")

    return EncodedBatch(h, spans)


def encode(
    graph: DiffGraph,
    params: EncoderParams,
    tokens: Sequence[str],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """Encode a single utterance into its ``T x d`` hidden matrix."""
    return encode_batch(graph, params, [tokens], training, rng).h


def encode_label_descriptions(
    labels: Sequence[str],
    describe: Describe,
    params: EncoderParams,
) -> Matrix:
    """Mean-pooled encoder states of each label description, one row per label.

    Descriptions are encoded without dropout in a throwaway graph.

    Raises:
        CorpusError: a label has an empty description.
    """
    if not labels:
        return np.zeros((0, params.d))

    descriptions = [list(describe(label)) for label in labels]
    for label, description in zip(labels, descriptions, strict=True):
        if not description:
            raise CorpusError(f"empty description for label {label!r}")

    graph = DiffGraph()
    batch = encode_batch(graph, params, descriptions)
    values = graph.value(batch.h)
    return np.stack([values[start:end].mean(axis=0) for start, end in batch.spans])


INTENT = "intent"
SLOT = "slot"


class LabelStore:
    """Persistent label embeddings keyed by label string.

    Each label is its own ``1 x d`` parameter named ``label.<kind>.<label>``,
    initialized from its description the first time an episode needs it.
    """

    def __init__(self, d: int, values: Mapping[str, Matrix] | None = None):
        self.d = d
        self.values: dict[str, Matrix] = dict(values or {})

    def __len__(self) -> int:
        return len(self.values)

    @staticmethod
    def name(kind: str, label: str) -> str:
        return f"label.{kind}.{label}"

    def __contains__(self, key: tuple[str, str]) -> bool:
        return self.name(*key) in self.values

    def ensure(self, kind: str, labels: Sequence[str], describe: Describe, params: EncoderParams) -> list[str]:
        """Initialize missing labels from their descriptions; returns the new names."""
        missing = [label for label in labels if self.name(kind, label) not in self.values]
        if not missing:
            return []

        rows = encode_label_descriptions(missing, describe, params)
        for label, row in zip(missing, rows, strict=True):
            self.values[self.name(kind, label)] = row.reshape(1, -1).copy()

        log.debug("Initialized %d %s label embeddings from descriptions", len(missing), kind)
        return [self.name(kind, label) for label in missing]

    def rows(self, graph: DiffGraph, kind: str, labels: Sequence[str]) -> Node:
        """Episode-local ``len(labels) x d`` matrix whose rows are graph parameters."""
        parts = [graph.parameter(self.name(kind, label), self.values[self.name(kind, label)]) for label in labels]
        return graph.concat_rows(parts, f"E_{kind}")

    def matrix(self, kind: str, labels: Sequence[str]) -> Matrix:
        return np.concatenate([self.values[self.name(kind, label)] for label in labels], axis=0)

    def copy(self) -> LabelStore:
        return LabelStore(self.d, {name: value.copy() for name, value in self.values.items()})
