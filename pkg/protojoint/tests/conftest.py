from __future__ import annotations

from collections.abc import Callable, Sequence

import pytest

from protojoint.config import TrainConfig, default_config
from protojoint.corpus import Corpus, SplitSet, Utterance
from protojoint.sampler import Episode, SamplerConfig, sample_episode
from protojoint_demo import build_demo_split


def pytest_addoption(parser: pytest.Parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]):
    if config.getoption("--runslow"):
        return

    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_utterance(intent: str, uid: int, value: str = "paris") -> Utterance:
    """``find <intent> in <value>`` with ``<value>`` tagged as a city."""
    return Utterance(("find", intent.lower(), "in", value), intent, ("O", "O", "O", "B-city"), uid)


@pytest.fixture
def corpus_factory() -> Callable[[Sequence[int]], Corpus]:
    """Build a corpus with one intent per size, ``Intent0``, ``Intent1``, ..."""

    def factory(sizes: Sequence[int]) -> Corpus:
        utterances: list[Utterance] = []
        for i, size in enumerate(sizes):
            utterances.extend(make_utterance(f"Intent{i}", len(utterances)) for _ in range(size))
        return Corpus.build(utterances)

    return factory


@pytest.fixture
def simple_records() -> list[dict]:
    """Three well-formed corpus records over two intents."""
    return [
        {
            "tokens": ["book", "a", "flight", "to", "new", "york"],
            "intent": "BookFlight",
            "slots": ["O", "O", "O", "O", "B-city", "I-city"],
        },
        {"tokens": ["book", "a", "flight"], "intent": "BookFlight", "slots": ["O", "O", "O"]},
        {"tokens": ["play", "jazz"], "intent": "PlayMusic", "slots": ["O", "B-genre"]},
    ]


@pytest.fixture(scope="session")
def demo_split() -> SplitSet:
    """A small bundled synthetic split: 6 training and 3 test intents, 12 utterances each."""
    return build_demo_split(utterances_per_intent=12, seed=0)


@pytest.fixture
def tiny_config() -> TrainConfig:
    """A fast configuration for smoke runs."""
    return default_config(d_w=8, d_h=6, epochs=2, episodes_per_epoch=3, u_max=8, dev_episodes=2)


@pytest.fixture
def demo_episode(demo_split: SplitSet) -> Episode:
    return sample_episode(demo_split.train, SamplerConfig(u_max=8, seed=3))
