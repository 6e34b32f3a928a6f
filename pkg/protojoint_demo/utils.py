"""Synthetic joint intent/slot corpus, separable by construction.

Every intent pairs an action verb with an object noun and carries its own
slot types, each introduced by a marker word. Test intents recombine verbs
and nouns seen in training and draw only slot values that occurred in
training utterances.
"""

from __future__ import annotations

import re

from faker import Faker

from protojoint.corpus import BEGIN, INSIDE, Corpus, SplitSet, Utterance
from protojoint.types import OUTSIDE, UtteranceRecord

VALUES_PER_SLOT = 12
UTTERANCES_PER_INTENT = 40
FILLERS = ("please", "now", "quickly", "today")

SLOT_MARKERS = {
    "city": "in",
    "country": "across",
    "person": "for",
    "company": "at",
    "day": "on",
    "month": "during",
    "color": "colored",
    "job": "as",
    "language": "speaking",
    "number": "count",
}

TRAIN_INTENTS = {
    "BookFlight": ("city", "day", "number"),
    "FindRestaurant": ("country", "company", "month"),
    "PlaySong": ("person", "language"),
    "CheckWeather": ("city", "month"),
    "ShowMovie": ("color", "job", "day"),
    "CancelHotel": ("company", "number", "person"),
}

TEST_INTENTS = {
    "BookHotel": ("city", "person"),
    "FindSong": ("language", "number"),
    "PlayMovie": ("color", "month"),
}

_WORD_RE = re.compile(r"[a-z0-9']+")
_CAMEL_RE = re.compile(r"[A-Z][a-z]+")


def _words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _value_pools(fake: Faker) -> dict[str, list[list[str]]]:
    providers = {
        "city": fake.city,
        "country": fake.country,
        "person": fake.first_name,
        "company": fake.last_name,
        "day": fake.day_of_week,
        "month": fake.month_name,
        "color": fake.color_name,
        "job": fake.job,
        "language": fake.language_name,
        "number": lambda: str(fake.random_int(1, 99)),
    }

    pools: dict[str, list[list[str]]] = {}
    for slot, provider in providers.items():
        values: list[list[str]] = []
        for _ in range(VALUES_PER_SLOT * 4):
            words = _words(provider())[:3]
            if words and words not in values:
                values.append(words)
            if len(values) == VALUES_PER_SLOT:
                break
        pools[slot] = values
    return pools


def _utterance(fake: Faker, intent: str, slots: tuple[str, ...], pools: dict[str, list[list[str]]]) -> UtteranceRecord:
    verb, noun = (part.lower() for part in _CAMEL_RE.findall(intent))
    tokens: list[str] = []
    labels: list[str] = []

    if fake.boolean(chance_of_getting_true=30):
        tokens.append(fake.random_element(FILLERS))
        labels.append(OUTSIDE)

    tokens += [verb, "the", noun]
    labels += [OUTSIDE] * 3

    for slot in fake.random_sample(slots, length=len(slots)):
        value = fake.random_element(pools[slot])
        tokens += [SLOT_MARKERS[slot], *value]
        labels += [OUTSIDE, f"{BEGIN}{slot}", *(f"{INSIDE}{slot}" for _ in value[1:])]

    return {"tokens": tokens, "intent": intent, "slots": labels}


def generate_mock_corpus(utterances_per_intent: int = UTTERANCES_PER_INTENT, seed: int = 0) -> list[UtteranceRecord]:
    """Records for every train and test intent, ids numbered from 0."""
    fake = Faker("en_US")
    fake.seed_instance(seed)
    pools = _value_pools(fake)

    records: list[UtteranceRecord] = []
    for intent, slots in TRAIN_INTENTS.items():
        for _ in range(utterances_per_intent):
            records.append(_utterance(fake, intent, slots, pools))

    # test intents only use slot values that occurred in training
    seen = {token for record in records for token in record["tokens"]}
    test_pools = {slot: [v for v in values if set(v) <= seen] or values for slot, values in pools.items()}
    for intent, slots in TEST_INTENTS.items():
        for _ in range(utterances_per_intent):
            records.append(_utterance(fake, intent, slots, test_pools))

    for number, record in enumerate(records):
        record["id"] = number
    return records


def generate_descriptions() -> dict[str, str]:
    """Description overrides for the slot types; intent names describe themselves."""
    return {slot: f"{slot} after {marker}" for slot, marker in SLOT_MARKERS.items()}


def build_demo_corpus(utterances_per_intent: int = UTTERANCES_PER_INTENT, seed: int = 0) -> Corpus:
    records = generate_mock_corpus(utterances_per_intent, seed)
    utterances = [Utterance.from_record(record, line) for line, record in enumerate(records, start=1)]
    return Corpus.build(utterances, overrides=generate_descriptions())


def build_demo_split(utterances_per_intent: int = UTTERANCES_PER_INTENT, seed: int = 0) -> SplitSet:
    """Training intents in train, held-out recombinations in test, no dev split."""
    corpus = build_demo_corpus(utterances_per_intent, seed)
    return SplitSet(corpus.subset(TRAIN_INTENTS), corpus.subset(()), corpus.subset(TEST_INTENTS))
