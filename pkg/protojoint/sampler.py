"""Variable-way, variable-shot episode construction.

Every episode is a pure function of the split, the master seed and the
episode index: its random stream is derived from ``(seed, "sampler", index)``
and every draw is recorded in the episode's :class:`SeedTrace`.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from protojoint import utils
from protojoint.corpus import Corpus, Utterance
from protojoint.exceptions import RetriesExhaustedError, SamplerError
from protojoint.types import OUTSIDE, EpisodeRecord, SeedTraceRecord

log = logging.getLogger(__name__)

MIN_WAY = 3
MAX_QUERY = 10
MAX_CLASS_SUPPORT = 20
ALPHA_LOW = math.log(0.5)
ALPHA_HIGH = math.log(2.0)
RETRY_POLICY = "resample"


@dataclass(frozen=True)
class SamplerConfig:
    """Episode sampling options.

    Attributes:
        u_max: Maximum support set size.
        seed: Master seed; the sampler stream is derived from it.
        episodes: Number of episodes to draw.
        max_retries: Resampling attempts for a degenerate draw.
        stream: Name of the derived random stream.
    """

    u_max: int = 20
    seed: int = 0
    episodes: int = 1
    max_retries: int = 100
    stream: str = utils.STREAM_SAMPLER

    def __post_init__(self):
        if self.u_max < 1:
            raise SamplerError("u_max must be positive")
        if self.episodes < 0:
            raise SamplerError("episodes must be >= 0")
        if self.max_retries < 0:
            raise SamplerError("max_retries must be >= 0")


@dataclass(frozen=True)
class SeedTrace:
    stream_seed: int
    index: int
    n_way: int
    classes: tuple[str, ...]
    beta: float
    alphas: dict[str, float]
    retries: int

    def to_record(self) -> SeedTraceRecord:
        return {
            "stream_seed": self.stream_seed,
            "index": self.index,
            "n_way": self.n_way,
            "classes": list(self.classes),
            "beta": self.beta,
            "alphas": dict(self.alphas),
            "retries": self.retries,
        }

    @classmethod
    def from_record(cls, record: SeedTraceRecord) -> SeedTrace:
        return cls(
            stream_seed=int(record["stream_seed"]),
            index=int(record["index"]),
            n_way=int(record["n_way"]),
            classes=tuple(record["classes"]),
            beta=float(record["beta"]),
            alphas={k: float(v) for k, v in record["alphas"].items()},
            retries=int(record["retries"]),
        )


@dataclass(frozen=True)
class Episode:
    """One few-shot task.

    Attributes:
        class_set: Intent labels in draw order.
        support: Support utterances per class, ``shots[c]`` each.
        query: Query utterances per class, ``k_q`` each.
        slot_label_set: ``O`` followed by the sorted slot labels seen in support.
        k_q: Query size per class.
        shots: Support size per class.
        seed_trace: Every random draw that produced the episode.
    """

    class_set: tuple[str, ...]
    support: dict[str, tuple[Utterance, ...]]
    query: dict[str, tuple[Utterance, ...]]
    slot_label_set: tuple[str, ...]
    k_q: int
    shots: dict[str, int]
    seed_trace: SeedTrace

    def support_utterances(self) -> list[Utterance]:
        return [u for c in self.class_set for u in self.support[c]]

    def query_utterances(self) -> list[Utterance]:
        return [u for c in self.class_set for u in self.query[c]]

    @property
    def support_size(self) -> int:
        return sum(self.shots.values())

    def to_record(self) -> EpisodeRecord:
        return {
            "class_set": list(self.class_set),
            "k_q": self.k_q,
            "shots": dict(self.shots),
            "slot_label_set": list(self.slot_label_set),
            "support": {c: [u.to_record() for u in self.support[c]] for c in self.class_set},
            "query": {c: [u.to_record() for u in self.query[c]] for c in self.class_set},
            "seed_trace": self.seed_trace.to_record(),
        }

    @classmethod
    def from_record(cls, record: EpisodeRecord | Mapping[str, Any]) -> Episode:
        def _utterances(rows: list[Any]) -> tuple[Utterance, ...]:
            return tuple(Utterance(tuple(r["tokens"]), r["intent"], tuple(r["slots"]), int(r["id"])) for r in rows)

        return cls(
            class_set=tuple(record["class_set"]),
            support={c: _utterances(rows) for c, rows in record["support"].items()},
            query={c: _utterances(rows) for c, rows in record["query"].items()},
            slot_label_set=tuple(record["slot_label_set"]),
            k_q=int(record["k_q"]),
            shots={c: int(k) for c, k in record["shots"].items()},
            seed_trace=SeedTrace.from_record(record["seed_trace"]),
        )


def check_preconditions(split: Corpus) -> None:
    """Raise SamplerError when no episode can be drawn from ``split``."""
    sizes = split.class_sizes()
    if len(sizes) < MIN_WAY:
        raise SamplerError(f"need at least {MIN_WAY} intent classes, split has {len(sizes)}")

    usable = sum(size >= 2 for size in sizes.values())  # noqa: PLR2004
    if usable < MIN_WAY:
        raise SamplerError(f"need at least {MIN_WAY} intent classes with 2 utterances, split has {usable}")


def sample_class_set(split: Corpus, rng: np.random.Generator) -> list[str]:
    """Draw N uniformly from ``[3, |C|]``, then N distinct classes without replacement."""
    classes = split.intent_inventory
    if len(classes) < MIN_WAY:
        raise SamplerError(f"need at least {MIN_WAY} intent classes, split has {len(classes)}")

    n_way = int(rng.integers(MIN_WAY, len(classes) + 1))
    picked = rng.choice(len(classes), size=n_way, replace=False)
    return [classes[i] for i in picked]


def compute_query_size(class_set: Sequence[str], split: Corpus) -> int:
    """``min(10, min_c floor(|U(c)| / 2))``; 0 means the episode must be rejected."""
    sizes = split.class_sizes()
    return min(MAX_QUERY, min(sizes[c] // 2 for c in class_set))


def draw_beta(rng: np.random.Generator) -> float:
    """Uniform on ``(0, 1]``."""
    return 1.0 - float(rng.random())


def draw_alphas(class_set: Sequence[str], rng: np.random.Generator) -> dict[str, float]:
    """Uniform on ``[log 0.5, log 2)`` per class."""
    return {c: float(rng.uniform(ALPHA_LOW, ALPHA_HIGH)) for c in class_set}


def compute_support_budget(
    class_set: Sequence[str],
    split: Corpus,
    k_q: int,
    u_max: int,
    rng: np.random.Generator | None = None,
    beta: float | None = None,
) -> int:
    """``min(U_max, sum_c ceil(beta * min(20, |U(c)| - k_q)))``.

    ``beta`` is drawn from ``rng`` unless given.
    """
    if beta is None:
        if rng is None:
            raise SamplerError("either rng or beta is required")
        beta = draw_beta(rng)

    sizes = split.class_sizes()
    total = sum(math.ceil(beta * min(MAX_CLASS_SUPPORT, sizes[c] - k_q)) for c in class_set)
    return min(u_max, total)


def compute_shots(
    class_set: Sequence[str],
    split: Corpus,
    budget: int,
    k_q: int,
    rng: np.random.Generator | None = None,
    alphas: Mapping[str, float] | float | None = None,
) -> dict[str, int]:
    """Distribute the support budget across classes.

    ``R_c = exp(alpha_c)|U(c)| / sum_c' exp(alpha_c')|U(c')|`` and
    ``k_c = max(1, min(floor(R_c (budget - N)) + 1, |U(c)| - k_q))``.
    Alphas are drawn from ``rng`` unless given; a float applies to every class.
    """
    if alphas is None:
        if rng is None:
            raise SamplerError("either rng or alphas is required")
        alphas = draw_alphas(class_set, rng)
    elif isinstance(alphas, (int, float)):
        alphas = {c: float(alphas) for c in class_set}

    sizes = split.class_sizes()
    weights = np.array([math.exp(alphas[c]) * sizes[c] for c in class_set])
    ratios = weights / weights.sum()
    slack = budget - len(class_set)

    return {
        c: max(1, min(math.floor(ratio * slack) + 1, sizes[c] - k_q))
        for c, ratio in zip(class_set, ratios, strict=True)
    }


def episode_rng(config: SamplerConfig, index: int) -> np.random.Generator:
    return utils.make_rng(config.seed, config.stream, index)


def sample_episode(
    split: Corpus,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    index: int = 0,
    beta: float | None = None,
    alphas: Mapping[str, float] | float | None = None,
) -> Episode:
    """Draw one episode.

    Degenerate draws (a class with fewer than two utterances, so ``k_q = 0``)
    are rejected and redrawn from the same stream up to ``max_retries`` times.
    ``beta`` and ``alphas`` fix the otherwise random budget and shot draws.

    Raises:
        SamplerError: the split cannot host any episode, or ``u_max`` is
            smaller than the drawn class count.
        RetriesExhaustedError: every attempt was degenerate.
    """
    check_preconditions(split)
    rng = rng or episode_rng(config, index)

    for retries in range(config.max_retries + 1):
        class_set = sample_class_set(split, rng)

        if config.u_max < len(class_set):
            raise SamplerError(f"u_max={config.u_max} is smaller than the drawn class count {len(class_set)}")

        k_q = compute_query_size(class_set, split)
        if k_q == 0:
            log.debug("Episode %d: rejected class set %s (k_q = 0)", index, class_set)
            continue

        episode_beta = draw_beta(rng) if beta is None else float(beta)
        budget = compute_support_budget(class_set, split, k_q, config.u_max, beta=episode_beta)

        if alphas is None:
            episode_alphas = draw_alphas(class_set, rng)
        elif isinstance(alphas, (int, float)):
            episode_alphas = {c: float(alphas) for c in class_set}
        else:
            episode_alphas = {c: float(alphas[c]) for c in class_set}

        shots = compute_shots(class_set, split, budget, k_q, alphas=episode_alphas)

        support: dict[str, tuple[Utterance, ...]] = {}
        query: dict[str, tuple[Utterance, ...]] = {}
        for c in class_set:
            pool = split.by_intent[c]
            order = rng.permutation(len(pool))
            query[c] = tuple(pool[i] for i in order[:k_q])
            support[c] = tuple(pool[i] for i in order[k_q : k_q + shots[c]])

        seen = {label for c in class_set for u in support[c] for label in u.slots if label != OUTSIDE}
        trace = SeedTrace(
            stream_seed=utils.derive_seed(config.seed, config.stream),
            index=index,
            n_way=len(class_set),
            classes=tuple(class_set),
            beta=episode_beta,
            alphas=episode_alphas,
            retries=retries,
        )
        log.debug(
            "Episode %d: N=%d k_q=%d budget=%d shots=%s retries=%d",
            index,
            len(class_set),
            k_q,
            budget,
            shots,
            retries,
        )

        return Episode(
            class_set=tuple(class_set),
            support=support,
            query=query,
            slot_label_set=(OUTSIDE, *sorted(seen)),
            k_q=k_q,
            shots=shots,
            seed_trace=trace,
        )

    raise RetriesExhaustedError(f"episode {index}: no valid class set after {config.max_retries} retries")


def sample_episodes(split: Corpus, config: SamplerConfig, start: int = 0) -> Iterator[Episode]:
    for index in range(start, start + config.episodes):
        yield sample_episode(split, config, index=index)


def check_episode(episode: Episode, split: Corpus, u_max: int) -> list[str]:
    """Return every violated episode invariant (empty when valid)."""
    sizes = split.class_sizes()
    problems: list[str] = []
    n_way = len(episode.class_set)

    if not MIN_WAY <= n_way <= len(sizes):
        problems.append(f"N={n_way} outside [3, {len(sizes)}]")
    if len(set(episode.class_set)) != n_way:
        problems.append("repeated class in class set")
    if not 1 <= episode.k_q <= MAX_QUERY:
        problems.append(f"k_q={episode.k_q} outside [1, 10]")

    for c in episode.class_set:
        k_c = episode.shots[c]
        if k_c < 1:
            problems.append(f"k_c={k_c} < 1 for {c}")
        if k_c > sizes[c] - episode.k_q:
            problems.append(f"k_c={k_c} exceeds |U|-k_q for {c}")
        if len(episode.support[c]) != k_c or len(episode.query[c]) != episode.k_q:
            problems.append(f"set sizes differ from shots/k_q for {c}")
        if {u.uid for u in episode.support[c]} & {u.uid for u in episode.query[c]}:
            problems.append(f"support and query overlap for {c}")
        if any(u.intent != c for u in (*episode.support[c], *episode.query[c])):
            problems.append(f"foreign utterance in {c}")

    beta = episode.seed_trace.beta
    cap = min(u_max, sum(math.ceil(beta * min(MAX_CLASS_SUPPORT, sizes[c] - episode.k_q)) for c in episode.class_set))
    if episode.support_size > cap:
        problems.append(f"support size {episode.support_size} exceeds budget {cap}")

    if not episode.slot_label_set or episode.slot_label_set[0] != OUTSIDE:
        problems.append("slot label set does not start with O")

    return problems


def write_episodes(path: str, episodes: Iterator[Episode] | Sequence[Episode], config: SamplerConfig) -> int:
    """Write one episode per JSON line, each tagged with the retry policy."""
    meta = {"retry_policy": RETRY_POLICY, "max_retries": config.max_retries, "u_max": config.u_max}
    return utils.write_jsonl(path, ({**episode.to_record(), "meta": meta} for episode in episodes))


def read_episodes(path: str) -> list[Episode]:
    episodes: list[Episode] = []
    for number, record in utils.read_jsonl(path, module="sampler"):
        try:
            episodes.append(Episode.from_record(record))
        except (KeyError, TypeError, ValueError, AttributeError) as err:
            raise SamplerError(f"malformed episode at line {number} of {path}: {err!r}") from err
    return episodes
