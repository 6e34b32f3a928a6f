"""Intent/slot tagged corpora: loading, validation, slot prefixing and class-level splits."""

from __future__ import annotations

import logging
import os
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from dataclasses import field as dataclass_field
from functools import cached_property
from typing import Any

import fsspec
import numpy as np
import pandas as pd

from protojoint import utils
from protojoint.exceptions import CorpusError, SplitError
from protojoint.sources import BaseCorpusSource, guess_source
from protojoint.types import OUTSIDE, UtteranceRecord

log = logging.getLogger(__name__)

BEGIN = "B-"
INSIDE = "I-"
PREFIX_SEPARATOR = "."
MIN_CLASSES_PER_SPLIT = 3
MIN_UTTERANCES_PER_CLASS = 2
SPLIT_NAMES = ("train", "dev", "test")

DESCRIPTION_WORDS = {OUTSIDE: "outside", BEGIN: "begin", INSIDE: "inside"}

_SEPARATORS_RE = re.compile(r"[-_.:/\s]+")
_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")


def split_label_name(name: str) -> tuple[str, ...]:
    """Tokenize a label name on punctuation and camel case, lowercased.

    ``"BookFlight"`` becomes ``("book", "flight")`` and ``"fromloc.city_name"``
    becomes ``("fromloc", "city", "name")``.
    """
    spaced = _CAMEL_RE.sub(" ", name)
    return tuple(part.lower() for part in _SEPARATORS_RE.split(spaced) if part)


def validate_slots(slots: Sequence[str], line: int | None = None) -> None:
    """Check BIO well-formedness of one slot sequence.

    Raises:
        CorpusError: unknown label shape or an ``I-X`` not continuing ``X``.
    """
    where = f" (line {line})" if line is not None else ""
    previous = OUTSIDE

    for position, label in enumerate(slots):
        if label != OUTSIDE:
            if not label.startswith((BEGIN, INSIDE)) or len(label) <= len(BEGIN):
                raise CorpusError(f"invalid slot label {label!r} at position {position}{where}")

            if label.startswith(INSIDE) and previous[len(BEGIN) :] != label[len(INSIDE) :]:
                raise CorpusError(f"I- without preceding B- at position {position}{where}")

        previous = label


def slot_type(label: str) -> str | None:
    """Return ``X`` for ``B-X``/``I-X`` and ``None`` for the outside label."""
    return None if label == OUTSIDE else label[len(BEGIN) :]


@dataclass(frozen=True)
class Utterance:
    """A labeled utterance.

    Attributes:
        tokens: Pre-tokenized words, at least one.
        intent: Intent label of the whole utterance.
        slots: BIO slot label per token.
        uid: Stable identifier, unique inside a corpus.
    """

    tokens: tuple[str, ...]
    intent: str
    slots: tuple[str, ...]
    uid: int = 0

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError("empty utterance")

        if len(self.tokens) != len(self.slots):
            raise CorpusError(f"length mismatch: {len(self.tokens)} tokens, {len(self.slots)} slots")

        if not self.intent:
            raise CorpusError("empty intent label")

        validate_slots(self.slots)

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_record(cls, record: Mapping[str, Any], line: int, uid: int | None = None) -> Utterance:
        """Validate a raw record, reporting problems with its line number."""
        missing = [key for key in ("tokens", "intent", "slots") if key not in record]
        if missing:
            raise CorpusError(f"malformed record at line {line}: missing {', '.join(missing)}")

        tokens, intent, slots = record["tokens"], record["intent"], record["slots"]

        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise CorpusError(f"malformed record at line {line}: tokens must be a list of strings")
        if not isinstance(slots, list) or not all(isinstance(s, str) for s in slots):
            raise CorpusError(f"malformed record at line {line}: slots must be a list of strings")
        if not isinstance(intent, str) or not intent:
            raise CorpusError(f"malformed record at line {line}: intent must be a nonempty string")
        if not tokens:
            raise CorpusError(f"empty utterance at line {line}")
        if len(tokens) != len(slots):
            raise CorpusError(f"length mismatch at line {line}")

        validate_slots(slots, line)

        record_id = record.get("id", uid if uid is not None else line - 1)
        return cls(tuple(tokens), intent, tuple(slots), int(record_id))

    def to_record(self) -> UtteranceRecord:
        return {"id": self.uid, "tokens": list(self.tokens), "intent": self.intent, "slots": list(self.slots)}


@dataclass(frozen=True)
class Corpus:
    """Validated utterances with their label inventories and descriptions.

    Attributes:
        utterances: Utterances in file order.
        intent_inventory: Sorted intent labels.
        slot_inventory: Sorted slot labels.
        descriptions: Description tokens for every inventory label.
        overrides: User-supplied description text keyed by intent, slot type
            or full slot label.
        prefixed: Whether slot types already carry their intent prefix.
    """

    utterances: tuple[Utterance, ...]
    intent_inventory: tuple[str, ...]
    slot_inventory: tuple[str, ...]
    descriptions: dict[str, tuple[str, ...]]
    overrides: dict[str, str] = dataclass_field(default_factory=dict)
    prefixed: bool = False

    @classmethod
    def build(
        cls,
        utterances: Iterable[Utterance],
        overrides: Mapping[str, str] | None = None,
        prefixed: bool = False,
    ) -> Corpus:
        """Derive inventories and descriptions from ``utterances``."""
        utterances = tuple(utterances)
        overrides = dict(overrides or {})

        intents = tuple(sorted({u.intent for u in utterances}))
        slots = tuple(sorted({label for u in utterances for label in u.slots}))

        uids = [u.uid for u in utterances]
        if len(set(uids)) != len(uids):
            raise CorpusError("duplicate utterance ids")

        corpus = cls(utterances, intents, slots, {}, overrides, prefixed)
        corpus.descriptions.update({label: corpus.describe(label) for label in (*intents, *slots)})
        return corpus

    def __len__(self) -> int:
        return len(self.utterances)

    @cached_property
    def by_intent(self) -> dict[str, tuple[Utterance, ...]]:
        """Utterances grouped per intent, in inventory order."""
        groups: dict[str, list[Utterance]] = {intent: [] for intent in self.intent_inventory}
        for utterance in self.utterances:
            groups[utterance.intent].append(utterance)
        return {intent: tuple(group) for intent, group in groups.items()}

    def class_sizes(self) -> dict[str, int]:
        return {intent: len(group) for intent, group in self.by_intent.items()}

    def _override(self, key: str) -> tuple[str, ...] | None:
        if key not in self.overrides:
            return None
        return tuple(self.overrides[key].lower().split())

    def _describe_type(self, name: str) -> tuple[str, ...]:
        if (override := self._override(name)) is not None:
            return override

        if self.prefixed:
            # longest intent prefix wins, intent names may themselves contain dots
            for intent in sorted(self.intent_inventory, key=len, reverse=True):
                if name.startswith(intent + PREFIX_SEPARATOR):
                    return self.describe(intent) + self._describe_type(name[len(intent) + 1 :])

        return split_label_name(name)

    def describe(self, label: str) -> tuple[str, ...]:
        """Description tokens of an intent or slot label.

        ``O`` is ``outside``; ``B-X``/``I-X`` are ``begin``/``inside`` followed by
        the description of ``X``; a prefixed type ``y.X`` concatenates the
        descriptions of ``y`` and ``X``. Sidecar overrides take precedence.

        Raises:
            CorpusError: the resulting description is empty.
        """
        if label in self.descriptions:
            return self.descriptions[label]

        if label in self.intent_inventory:
            tokens = self._override(label) or split_label_name(label)
        elif label == OUTSIDE:
            tokens = self._override(label) or (DESCRIPTION_WORDS[OUTSIDE],)
        elif label.startswith((BEGIN, INSIDE)):
            tokens = self._override(label) or (
                DESCRIPTION_WORDS[label[: len(BEGIN)]],
                *self._describe_type(label[len(BEGIN) :]),
            )
        else:
            tokens = self._override(label) or split_label_name(label)

        if not tokens:
            raise CorpusError(f"empty description for label {label!r}")

        return tokens

    def subset(self, intents: Iterable[str]) -> Corpus:
        """Corpus restricted to ``intents``, keeping overrides and the prefix flag."""
        keep = set(intents)
        return Corpus.build(
            (u for u in self.utterances if u.intent in keep),
            overrides=self.overrides,
            prefixed=self.prefixed,
        )

    def summary(self) -> pd.DataFrame:
        """Per-intent counts of utterances, tokens and slot spans."""
        frame = pd.DataFrame(
            {
                "intent": [u.intent for u in self.utterances],
                "tokens": [len(u) for u in self.utterances],
                "spans": [sum(label.startswith(BEGIN) for label in u.slots) for u in self.utterances],
            },
        )
        if frame.empty:
            return pd.DataFrame(columns=["intent", "utterances", "tokens", "spans"])

        grouped = frame.groupby("intent", sort=True).agg(
            utterances=("tokens", "size"),
            tokens=("tokens", "sum"),
            spans=("spans", "sum"),
        )
        return grouped.reset_index()


def load_descriptions(path: str) -> dict[str, str]:
    """Read a sidecar JSON object mapping labels to description text."""
    try:
        data = utils.read_json(path)
    except FileNotFoundError as err:
        raise CorpusError(f"cannot read descriptions {path}") from err
    except ValueError as err:
        raise CorpusError(f"malformed descriptions file {path}: {err}") from err

    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise CorpusError(f"descriptions file {path} must map labels to strings")

    return data


def read_corpus(source: BaseCorpusSource, descriptions: Mapping[str, str] | None = None) -> Corpus:
    utterances = [Utterance.from_record(record, line) for line, record in source.records()]
    corpus = Corpus.build(utterances, overrides=descriptions)

    log.info(
        "Loaded %d utterances, %d intents, %d slot labels from %s",
        len(corpus),
        len(corpus.intent_inventory),
        len(corpus.slot_inventory),
        source.describe(),
    )
    return corpus


def load_corpus(path: str, descriptions: str | Mapping[str, str] | None = None) -> Corpus:
    """Load and validate a corpus file (JSON lines) or sequence directory.

    Args:
        path: Corpus location, local or any fsspec URL.
        descriptions: Optional sidecar path or mapping of description overrides.

    Raises:
        CorpusError: malformed record, length mismatch or invalid BIO transition.
    """
    overrides = load_descriptions(descriptions) if isinstance(descriptions, str) else descriptions
    return read_corpus(guess_source(path), overrides)


def write_corpus(corpus: Corpus, path: str) -> int:
    """Write utterances as JSON lines; returns the record count."""
    return utils.write_jsonl(path, (u.to_record() for u in corpus.utterances))


def prefix_slot_labels(corpus: Corpus) -> Corpus:
    """Prefix every slot type with its utterance intent: ``B-X`` becomes ``B-y.X``.

    Raises:
        CorpusError: the corpus is already prefixed.
    """
    if corpus.prefixed:
        raise CorpusError("slot labels are already prefixed")

    def _prefix(label: str, intent: str) -> str:
        if label == OUTSIDE:
            return label
        return f"{label[: len(BEGIN)]}{intent}{PREFIX_SEPARATOR}{label[len(BEGIN) :]}"

    utterances = [
        Utterance(u.tokens, u.intent, tuple(_prefix(label, u.intent) for label in u.slots), u.uid)
        for u in corpus.utterances
    ]
    prefixed = Corpus.build(utterances, overrides=corpus.overrides, prefixed=True)
    log.debug("Prefixed slot labels: %d -> %d", len(corpus.slot_inventory), len(prefixed.slot_inventory))
    return prefixed


@dataclass(frozen=True)
class SplitSet:
    """Class-disjoint train/dev/test corpora."""

    train: Corpus
    dev: Corpus
    test: Corpus

    def __post_init__(self):
        parts = [set(part.intent_inventory) for part in self.parts().values()]
        for i, first in enumerate(parts):
            for second in parts[i + 1 :]:
                if first & second:
                    raise SplitError(f"intent classes shared between splits: {sorted(first & second)}")

    def parts(self) -> dict[str, Corpus]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def _check_fractions(fractions: Sequence[float]) -> tuple[float, float, float]:
    if len(fractions) != len(SPLIT_NAMES):
        raise SplitError("expected three split fractions (train, dev, test)")

    values = tuple(float(f) for f in fractions)
    if any(f < 0 for f in values) or abs(sum(values) - 1.0) > 1e-9:  # noqa: PLR2004
        raise SplitError(f"split fractions must be nonnegative and sum to 1, got {values}")

    return values[0], values[1], values[2]


def split_by_intent(corpus: Corpus, fractions: Sequence[float], seed: int) -> SplitSet:
    """Partition intent classes into train/dev/test.

    Classes with fewer than two utterances are dropped first. Classes are
    shuffled with the seed, stably ordered by size (largest first) and each
    goes to the split with the largest remaining utterance-mass deficit,
    except that splits still short of three classes take priority once the
    remaining classes are just enough to fill them.

    Raises:
        SplitError: invalid fractions or too few classes for the nonempty splits.
    """
    targets_fraction = _check_fractions(fractions)
    active = [i for i, f in enumerate(targets_fraction) if f > 0]

    mass = pd.Series([u.intent for u in corpus.utterances], dtype="object").value_counts()
    dropped = sorted(mass[mass < MIN_UTTERANCES_PER_CLASS].index)
    if dropped:
        log.warning("Dropping %d intent classes with fewer than 2 utterances: %s", len(dropped), dropped)
    mass = mass[mass >= MIN_UTTERANCES_PER_CLASS]

    required = MIN_CLASSES_PER_SPLIT * len(active)
    if len(mass) < required:
        raise SplitError(
            f"infeasible split: {len(mass)} usable intent classes, {len(active)} nonempty splits need {required}",
        )

    rng = utils.make_rng(seed, utils.STREAM_SPLIT)
    shuffled = [str(c) for c in rng.permutation(np.array(sorted(mass.index), dtype=object))]
    ordered = sorted(shuffled, key=lambda c: -int(mass[c]))

    total = float(mass.sum())
    targets = np.array(targets_fraction) * total
    assigned_mass = np.zeros(len(SPLIT_NAMES))
    assigned: list[list[str]] = [[] for _ in SPLIT_NAMES]

    for position, intent in enumerate(ordered):
        remaining = len(ordered) - position
        short = [i for i in active if len(assigned[i]) < MIN_CLASSES_PER_SPLIT]
        needed = sum(MIN_CLASSES_PER_SPLIT - len(assigned[i]) for i in short)
        candidates = short if needed >= remaining else active

        # ties go to the earlier split
        target = max(candidates, key=lambda i: (targets[i] - assigned_mass[i], -i))
        assigned[target].append(intent)
        assigned_mass[target] += int(mass[intent])

    kept = corpus.subset(mass.index) if dropped else corpus
    split = SplitSet(*(kept.subset(names) for names in assigned))

    log.info(
        "Split %d classes into train/dev/test = %d/%d/%d",
        len(ordered),
        *(len(names) for names in assigned),
    )
    return split


def save_split(split: SplitSet, out_dir: str, seed: int, fractions: Sequence[float]) -> dict[str, str]:
    """Write the split directory: one JSON lines file per split, descriptions and metadata."""
    paths: dict[str, str] = {}

    for name, part in split.parts().items():
        paths[name] = os.path.join(out_dir, f"{name}.jsonl")
        write_corpus(part, paths[name])

    descriptions: dict[str, str] = dict(split.train.overrides)
    for part in split.parts().values():
        descriptions.update({label: " ".join(tokens) for label, tokens in part.descriptions.items()})

    paths["descriptions"] = os.path.join(out_dir, "descriptions.json")
    utils.write_json(paths["descriptions"], descriptions)

    paths["split"] = os.path.join(out_dir, "split.json")
    utils.write_json(
        paths["split"],
        {
            "prefixed": split.train.prefixed,
            "seed": seed,
            "fractions": list(fractions),
            "intents": {name: list(part.intent_inventory) for name, part in split.parts().items()},
        },
    )
    return paths


def load_split(split_dir: str) -> SplitSet:
    """Read a directory written by :func:`save_split`."""
    meta_path = os.path.join(split_dir, "split.json")
    fs, _ = fsspec.core.url_to_fs(meta_path)
    if not fs.exists(meta_path):
        raise SplitError(f"{split_dir} is not a split directory (missing split.json)")

    try:
        meta = utils.read_json(meta_path)
    except ValueError as err:
        raise SplitError(f"malformed split metadata {meta_path}: {err}") from err
    overrides = load_descriptions(os.path.join(split_dir, "descriptions.json"))

    parts: dict[str, Corpus] = {}
    for name in SPLIT_NAMES:
        path = os.path.join(split_dir, f"{name}.jsonl")
        plain = load_corpus(path, overrides) if fs.exists(path) else Corpus.build([], overrides)
        parts[name] = Corpus.build(plain.utterances, overrides=overrides, prefixed=bool(meta.get("prefixed")))

    return SplitSet(**parts)
