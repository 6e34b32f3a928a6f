"""Intent accuracy, slot F1, test-episode evaluation, the loss-mode ablation and embedding export."""

from __future__ import annotations

import logging
import os
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from dataclasses import field as dataclass_field
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from protojoint import utils
from protojoint.config import DISABLED_WEIGHTS, TrainConfig, build_config, get_declarations
from protojoint.corpus import BEGIN, INSIDE, Corpus, SplitSet, slot_type
from protojoint.exceptions import EvaluationError
from protojoint.model import Model, Prediction
from protojoint.sampler import Episode, SamplerConfig, sample_episodes
from protojoint.types import OUTSIDE, Matrix, MeanStd

if TYPE_CHECKING:
    from protojoint.trainer import TrainReport

log = logging.getLogger(__name__)

Span = tuple[str, int, int]
ABLATION_MODES = ("oo", "wo", "ww")
INTERACTION_ROWS = ("slot_to_intent", "intent_to_slot")


def bio_to_spans(labels: Sequence[str]) -> list[Span]:
    """Decode ``(type, start, end)`` spans, ``end`` exclusive.

    An ``I-X`` that does not continue an open ``X`` span opens a new span.
    """
    spans: list[Span] = []
    current: list[Any] | None = None

    for position, label in enumerate(labels):
        kind = slot_type(label)
        continues = current is not None and label.startswith(INSIDE) and current[0] == kind

        if continues:
            current[2] = position + 1  # type: ignore
            continue

        if current is not None:
            spans.append((current[0], current[1], current[2]))
            current = None

        if kind is not None and label.startswith((BEGIN, INSIDE)):
            current = [kind, position, position + 1]

    if current is not None:
        spans.append((current[0], current[1], current[2]))

    return spans


def spans_to_bio(spans: Iterable[Span], length: int) -> list[str]:
    labels = [OUTSIDE] * length
    for kind, start, end in spans:
        labels[start] = f"{BEGIN}{kind}"
        for position in range(start + 1, end):
            labels[position] = f"{INSIDE}{kind}"
    return labels


@dataclass
class Counts:
    """True positive, false positive and false negative counts."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: Counts) -> Counts:
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        found = self.tp + self.fp
        return self.tp / found if found else 0.0

    @property
    def recall(self) -> float:
        origin = self.tp + self.fn
        return self.tp / origin if origin else 0.0

    @property
    def f1(self) -> float:
        # nothing predicted and nothing expected counts as agreement
        if not (self.tp or self.fp or self.fn):
            return 1.0
        precision, recall = self.precision, self.recall
        return 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    def to_record(self) -> dict[str, float]:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def _check_lengths(predictions: Sequence[Any], gold: Sequence[Any]) -> None:
    if len(predictions) != len(gold):
        raise EvaluationError(f"length mismatch: {len(predictions)} predictions for {len(gold)} gold items")


def ic_accuracy(predictions: Sequence[str], gold: Sequence[str]) -> float:
    _check_lengths(predictions, gold)
    if not gold:
        raise EvaluationError("nothing to score")
    return sum(p == g for p, g in zip(predictions, gold, strict=True)) / len(gold)


def span_counts(predictions: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]) -> dict[str, Counts]:
    """Exact-match span counts per slot type."""
    _check_lengths(predictions, gold)
    counts: dict[str, Counts] = {}

    for predicted, expected in zip(predictions, gold, strict=True):
        _check_lengths(predicted, expected)
        found = Counter(bio_to_spans(predicted))
        origin = Counter(bio_to_spans(expected))

        for span in found | origin:
            entry = counts.setdefault(span[0], Counts())
            matched = min(found[span], origin[span])
            entry.tp += matched
            entry.fp += found[span] - matched
            entry.fn += origin[span] - matched

    return counts


def token_counts(predictions: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]) -> Counts:
    """Micro counts over non-``O`` token labels."""
    _check_lengths(predictions, gold)
    counts = Counts()

    for predicted, expected in zip(predictions, gold, strict=True):
        _check_lengths(predicted, expected)
        for p, g in zip(predicted, expected, strict=True):
            if p == g:
                counts.tp += g != OUTSIDE
                continue
            counts.fp += p != OUTSIDE
            counts.fn += g != OUTSIDE

    return counts


def sf_f1(predictions: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]) -> tuple[float, float]:
    """``(span_f1, token_f1)`` micro averages.

    Raises:
        EvaluationError: a predicted and a gold sequence differ in length.
    """
    spans = sum(span_counts(predictions, gold).values(), Counts())
    return spans.f1, token_counts(predictions, gold).f1


def mean_std(values: Sequence[float]) -> MeanStd:
    """Mean and population standard deviation."""
    if not values:
        return {"mean": 0.0, "std": 0.0}
    array = np.asarray(values, dtype=np.float64)
    return {"mean": float(array.mean()), "std": float(array.std())}


@dataclass
class EpisodeScore:
    ic_accuracy: float
    span: dict[str, Counts]
    token: Counts
    unscorable_tokens: int

    @property
    def span_f1(self) -> float:
        return sum(self.span.values(), Counts()).f1


def score_episode(episode: Episode, predictions: Sequence[Prediction]) -> EpisodeScore:
    queries = episode.query_utterances()
    predicted_slots = [p.slots for p in predictions]
    gold_slots = [u.slots for u in queries]

    known = set(episode.slot_label_set)
    unscorable = sum(label not in known for u in queries for label in u.slots)

    return EpisodeScore(
        ic_accuracy=ic_accuracy([p.intent for p in predictions], [u.intent for u in queries]),
        span=span_counts(predicted_slots, gold_slots),
        token=token_counts(predicted_slots, gold_slots),
        unscorable_tokens=unscorable,
    )


@dataclass
class EvalReport:
    """Aggregated test-episode metrics.

    Attributes:
        episodes: Number of evaluated episodes.
        ic_accuracy: Mean and std of per-episode intent accuracy.
        sf_f1_span: Mean and std of per-episode span micro F1.
        sf_f1_token: Mean and std of per-episode token micro F1.
        unscorable_tokens: Query tokens whose gold label had no prototype.
        per_label: Span precision, recall and F1 per slot type over all episodes.
        seed_traces: Seed trace of every evaluated episode.
    """

    episodes: int
    ic_accuracy: MeanStd
    sf_f1_span: MeanStd
    sf_f1_token: MeanStd
    unscorable_tokens: int
    per_label: dict[str, dict[str, float]] = dataclass_field(default_factory=dict)
    seed_traces: list[dict[str, Any]] = dataclass_field(default_factory=list)

    @classmethod
    def aggregate(cls, episodes: Sequence[Episode], scores: Sequence[EpisodeScore]) -> EvalReport:
        per_label: dict[str, Counts] = {}
        for score in scores:
            for kind, counts in score.span.items():
                per_label[kind] = per_label.get(kind, Counts()) + counts

        return cls(
            episodes=len(scores),
            ic_accuracy=mean_std([s.ic_accuracy for s in scores]),
            sf_f1_span=mean_std([s.span_f1 for s in scores]),
            sf_f1_token=mean_std([s.token.f1 for s in scores]),
            unscorable_tokens=sum(s.unscorable_tokens for s in scores),
            per_label={kind: per_label[kind].to_record() for kind in sorted(per_label)},
            seed_traces=[dict(e.seed_trace.to_record()) for e in episodes],
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "episodes": self.episodes,
            "ic_accuracy": dict(self.ic_accuracy),
            "sf_f1_span": dict(self.sf_f1_span),
            "sf_f1_token": dict(self.sf_f1_token),
            "unscorable_tokens": self.unscorable_tokens,
            "per_label": self.per_label,
            "seed_traces": self.seed_traces,
        }


def evaluate_episodes(
    model: Model, episodes: Sequence[Episode], describe: Callable[[str], Sequence[str]]
) -> EvalReport:
    """Predict and score each episode with a label store private to the evaluation."""
    evaluator = model.evaluation_copy()
    scores = [score_episode(episode, evaluator.predict(episode, describe)) for episode in episodes]
    report = EvalReport.aggregate(episodes, scores)

    if report.unscorable_tokens:
        log.warning("%d query tokens had no slot prototype and count as misses", report.unscorable_tokens)
    return report


def run_test_episodes(
    model: Model,
    split: Corpus,
    n_episodes: int,
    u_max: int,
    seed: int,
    stream: str = utils.STREAM_EVAL,
    max_retries: int = 100,
) -> EvalReport:
    """Sample ``n_episodes`` from ``split`` on the ``eval`` stream and evaluate them."""
    config = SamplerConfig(u_max=u_max, seed=seed, episodes=n_episodes, max_retries=max_retries, stream=stream)
    episodes = list(sample_episodes(split, config))
    return evaluate_episodes(model, episodes, split.describe)


def _ablation_config(base: TrainConfig, mode: str, interaction: str | None = None) -> TrainConfig:
    values = base.as_dict()
    declarations = get_declarations()
    # weights the base mode zeroed come back at their declared defaults
    for weight in DISABLED_WEIGHTS[base.mode]:
        values[weight] = declarations[weight].default
    values["mode"] = mode
    if interaction is not None:
        values["interaction"] = interaction
    return build_config(values, explicit={"mode", "interaction"})


@dataclass
class AblationResult:
    """Evaluation report and training report of every ablation row."""

    reports: dict[str, EvalReport]
    training: dict[str, TrainReport]

    def table(self) -> pd.DataFrame:
        rows: list[dict[str, Any]] = []
        for name, report in self.reports.items():
            mode, _, interaction = name.partition("/")
            final = self.training[name].records[-1].losses if self.training[name].records else {}
            rows.append(
                {
                    "row": name,
                    "mode": mode,
                    "interaction": interaction or "both",
                    "ic_accuracy_mean": report.ic_accuracy["mean"],
                    "ic_accuracy_std": report.ic_accuracy["std"],
                    "sf_f1_span_mean": report.sf_f1_span["mean"],
                    "sf_f1_span_std": report.sf_f1_span["std"],
                    "sf_f1_token_mean": report.sf_f1_token["mean"],
                    "ic_scl": final.get("ic_scl"),
                    "sf_scl": final.get("sf_scl"),
                }
            )
        return pd.DataFrame(rows)


def ablate(
    split: SplitSet,
    base: TrainConfig,
    out_dir: str,
    n_episodes: int = 100,
    with_interaction: bool = False,
) -> AblationResult:
    """Train and evaluate ``oo``, ``wo`` and ``ww`` with shared seeds.

    Every row trains on the same sampler stream and is tested on the same
    ``eval`` episodes. ``with_interaction`` appends ``ww`` rows with a single
    interaction direction.
    """
    from protojoint.trainer import train  # noqa: PLC0415

    rows: list[tuple[str, TrainConfig]] = [(mode, _ablation_config(base, mode)) for mode in ABLATION_MODES]
    if with_interaction:
        rows += [(f"ww/{name}", _ablation_config(base, "ww", name)) for name in INTERACTION_ROWS]

    test_config = SamplerConfig(
        u_max=base.u_max,
        seed=base.seed,
        episodes=n_episodes,
        max_retries=base.max_retries,
        stream=utils.STREAM_EVAL,
    )
    episodes = list(sample_episodes(split.test, test_config))

    reports: dict[str, EvalReport] = {}
    training: dict[str, TrainReport] = {}
    for name, config in rows:
        log.info("Ablation row %s", name)
        model, training[name] = train(split, config, os.path.join(out_dir, name.replace("/", "-")))
        reports[name] = evaluate_episodes(model, episodes, split.test.describe)

    return AblationResult(reports, training)


def embedding_rows(
    model: Model,
    episodes: Sequence[Episode],
    describe: Callable[[str], Sequence[str]],
) -> list[dict[str, Any]]:
    """``(id, intent, z, c)`` of every distinct utterance, first occurrence wins."""
    evaluator = model.evaluation_copy()
    rows: dict[int, dict[str, Any]] = {}

    for episode in episodes:
        utterances, z, c = evaluator.embed(episode, describe)
        for position, utterance in enumerate(utterances):
            if utterance.uid in rows:
                continue
            rows[utterance.uid] = {
                "id": utterance.uid,
                "intent": utterance.intent,
                "z": z[position].tolist(),
                "c": c[position].tolist(),
            }

    return list(rows.values())


def export_embeddings(
    model: Model,
    episodes: Sequence[Episode],
    path: str,
    describe: Callable[[str], Sequence[str]],
) -> int:
    """Write sentence embeddings as JSON lines, or Parquet when ``path`` ends in ``.parquet``."""
    rows = embedding_rows(model, episodes, describe)

    if path.endswith(".parquet"):
        utils.ensure_parent(path)
        pd.DataFrame(rows).to_parquet(path)
        return len(rows)

    return utils.write_jsonl(path, rows)


def read_embeddings(path: str) -> pd.DataFrame:
    if path.endswith(".parquet"):
        return pd.read_parquet(path)
    return pd.DataFrame([record for _, record in utils.read_jsonl(path, module="evaluation")])


def _unit_rows(vectors: Matrix) -> Matrix:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return vectors / np.where(norms > 0, norms, 1.0)


def embedding_separation(vectors: Matrix | Sequence[Sequence[float]], labels: Sequence[str]) -> float:
    """Mean intra-class minus mean inter-class cosine similarity over distinct pairs."""
    matrix = np.asarray(vectors, dtype=np.float64)
    if len(labels) != matrix.shape[0]:
        raise EvaluationError("one label per vector expected")

    unit = _unit_rows(matrix)
    similarity = unit @ unit.T
    codes, _ = pd.factorize(pd.Series(list(labels)))
    same = codes[:, None] == codes[None, :]
    upper = np.triu(np.ones_like(similarity, dtype=bool), k=1)

    intra = similarity[same & upper]
    inter = similarity[~same & upper]
    if not intra.size or not inter.size:
        raise EvaluationError("need at least two classes and one class with two vectors")

    return float(intra.mean() - inter.mean())
