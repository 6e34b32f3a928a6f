"""The joint few-shot model: encoder, label store, interaction, prototypes and losses wired per episode."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from protojoint import utils
from protojoint.config import TrainConfig
from protojoint.corpus import Corpus, Utterance
from protojoint.diffcore import DiffGraph, Node
from protojoint.encoder import INTENT, SLOT, Describe, EncoderParams, LabelStore, build_vocab, encode_batch
from protojoint.interaction import JointRepresentations, represent
from protojoint.protonet import EpisodeLayout, EpisodePosteriors, episode_posteriors, pn_losses
from protojoint.sampler import Episode
from protojoint.scl import ic_scl, sf_scl
from protojoint.types import Matrix

log = logging.getLogger(__name__)

IC_PN = "ic_pn"
SF_PN = "sf_pn"
IC_SCL = "ic_scl"
SF_SCL = "sf_scl"
LOSS_TERMS = (IC_PN, SF_PN, IC_SCL, SF_SCL)


def loss_weights(config: TrainConfig) -> dict[str, float]:
    return {IC_PN: 1.0, SF_PN: config.lambda_, IC_SCL: config.gamma, SF_SCL: config.delta}


def enabled_terms(config: TrainConfig) -> tuple[str, ...]:
    """Loss terms the mode computes; disabled terms are never built."""
    terms = [IC_PN, SF_PN]
    if config.uses_ic_scl:
        terms.append(IC_SCL)
    if config.uses_sf_scl:
        terms.append(SF_SCL)
    return tuple(terms)


def combine_losses(graph: DiffGraph, parts: Mapping[str, Node], config: TrainConfig) -> Node:
    """``L_IC_pn + lambda L_SF_pn + gamma L_IC_scl + delta L_SF_scl`` over the given parts."""
    weights = loss_weights(config)
    total = parts[IC_PN]
    for term in LOSS_TERMS[1:]:
        if term in parts:
            total = graph.add(total, graph.scale(parts[term], weights[term]))
    return total


def episode_layout(utterances: Sequence[Utterance], n_support: int, hide_query: bool = False) -> EpisodeLayout:
    spans: list[tuple[int, int]] = []
    start = 0
    for utterance in utterances:
        spans.append((start, start + len(utterance)))
        start += len(utterance)

    intents = [u.intent for u in utterances]
    slots = [u.slots for u in utterances]
    if hide_query:
        for position in range(n_support, len(utterances)):
            intents[position] = ""
            slots[position] = ("",) * len(utterances[position])

    return EpisodeLayout(spans, intents, slots, n_support)


@dataclass
class EpisodeOutput:
    """Everything built for one episode on one graph.

    Attributes:
        graph: The episode graph.
        total: Combined loss node (``None`` when losses were not requested).
        parts: Computed loss terms by name.
        posteriors: Query posteriors.
        reps: Token and sentence representations.
        layout: Row bookkeeping.
        unscorable_tokens: Query tokens without a gold prototype.
        skipped_ic: Queries without a positive in the intent contrastive loss.
        skipped_sf: Query tokens skipped by the slot contrastive loss.
    """

    graph: DiffGraph
    total: Node | None
    parts: dict[str, Node]
    posteriors: EpisodePosteriors
    reps: JointRepresentations
    layout: EpisodeLayout
    unscorable_tokens: int = 0
    skipped_ic: int = 0
    skipped_sf: int = 0

    def values(self) -> dict[str, float]:
        values = {term: self.graph.scalar(node) for term, node in self.parts.items()}
        if self.total is not None:
            values["total"] = self.graph.scalar(self.total)
        return values


@dataclass(frozen=True)
class Prediction:
    uid: int
    intent: str
    slots: tuple[str, ...]


class Model:
    """Trainable state plus the episode forward pass.

    Args:
        encoder: Embedding table and LSTM weights.
        labels: Label embedding store.
        config: Resolved training configuration.
    """

    def __init__(self, encoder: EncoderParams, labels: LabelStore, config: TrainConfig):
        self.encoder = encoder
        self.labels = labels
        self.config = config

    @classmethod
    def create(cls, train: Corpus, config: TrainConfig) -> Model:
        """Fresh model with a vocabulary built from ``train`` and weights from the ``init`` stream."""
        vocab = build_vocab(train)
        rng = utils.make_rng(config.seed, utils.STREAM_INIT)
        encoder = EncoderParams.initialize(vocab, config.d_w, config.d_h, config.dropout, rng)
        log.debug("Initialized encoder: |V|=%d d_w=%d d_h=%d", len(vocab), config.d_w, config.d_h)
        return cls(encoder, LabelStore(encoder.d), config)

    def parameters(self) -> dict[str, Matrix]:
        """Every trainable array by name; updating an array in place updates the model."""
        return {**self.encoder.values, **self.labels.values}

    def evaluation_copy(self) -> Model:
        """Shares encoder weights; label embeddings added during evaluation stay in the copy."""
        return Model(self.encoder, self.labels.copy(), self.config)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, value in sorted(self.parameters().items()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return digest.hexdigest()

    def prepare_labels(self, class_set: Sequence[str], slot_labels: Sequence[str], describe: Describe) -> None:
        self.labels.ensure(INTENT, class_set, describe, self.encoder)
        self.labels.ensure(SLOT, slot_labels, describe, self.encoder)

    def represent(
        self,
        graph: DiffGraph,
        utterances: Sequence[Utterance],
        class_set: Sequence[str],
        slot_labels: Sequence[str],
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> JointRepresentations:
        batch = encode_batch(graph, self.encoder, [u.tokens for u in utterances], training, rng)
        return represent(
            graph,
            batch.h,
            batch.spans,
            self.labels.rows(graph, INTENT, class_set),
            self.labels.rows(graph, SLOT, slot_labels),
            self.config.interaction,
        )

    def forward(
        self,
        episode: Episode,
        describe: Describe,
        training: bool = False,
        rng: np.random.Generator | None = None,
        with_losses: bool = True,
    ) -> EpisodeOutput:
        """Build the episode graph: representations, posteriors and, optionally, the enabled losses."""
        config = self.config
        self.prepare_labels(episode.class_set, episode.slot_label_set, describe)

        support = episode.support_utterances()
        utterances = [*support, *episode.query_utterances()]
        layout = episode_layout(utterances, len(support), hide_query=not with_losses)

        graph = DiffGraph()
        reps = self.represent(graph, utterances, episode.class_set, episode.slot_label_set, training, rng)
        posteriors = episode_posteriors(
            graph,
            reps.sentence,
            reps.h_slot,
            layout,
            episode.class_set,
            episode.slot_label_set,
            config.window,
            config.window_norm,
        )

        output = EpisodeOutput(graph, None, {}, posteriors, reps, layout)
        if not with_losses:
            return output

        pn = pn_losses(graph, posteriors, layout, episode.class_set)
        output.parts = {IC_PN: pn.ic_loss, SF_PN: pn.sf_loss}
        output.unscorable_tokens = pn.unscorable_tokens

        if config.uses_ic_scl:
            result = ic_scl(
                graph, reps.z, layout.support, layout.query, layout.intents, config.tau, config.scl_normalize
            )
            output.parts[IC_SCL] = result.loss
            output.skipped_ic = result.skipped

        if config.uses_sf_scl:
            tokens = reps.h if config.scl_source == "h" else reps.h_slot
            result = sf_scl(
                graph,
                tokens,
                layout.tokens_of(layout.support),
                layout.tokens_of(layout.query),
                config.tau,
                config.scl_normalize,
            )
            output.parts[SF_SCL] = result.loss
            output.skipped_sf = result.skipped

        output.total = combine_losses(graph, output.parts, config)
        return output

    def predict(self, episode: Episode, describe: Describe) -> list[Prediction]:
        """Most probable intent and slot sequence of every query; ties go to the earlier label.

        Query labels are never read and the contrastive losses are not built.
        """
        output = self.forward(episode, describe, with_losses=False)
        posteriors = output.posteriors
        graph = output.graph

        intents = np.argmax(graph.value(posteriors.intent_log_probs), axis=1)
        slots = np.argmax(graph.value(posteriors.slot_log_probs), axis=1)

        predictions: list[Prediction] = []
        offset = 0
        for row, utterance in enumerate(episode.query_utterances()):
            labels = tuple(posteriors.slot_labels[k] for k in slots[offset : offset + len(utterance)])
            offset += len(utterance)
            predictions.append(Prediction(utterance.uid, episode.class_set[intents[row]], labels))

        return predictions

    def embed(self, episode: Episode, describe: Describe) -> tuple[list[Utterance], Matrix, Matrix]:
        """Sentence vectors ``z`` and ``c`` of every episode utterance (support first)."""
        output = self.forward(episode, describe, with_losses=False)
        utterances = [*episode.support_utterances(), *episode.query_utterances()]
        return utterances, output.graph.value(output.reps.z), output.graph.value(output.reps.sentence)
