from protojoint_demo.utils import (
    TEST_INTENTS,
    TRAIN_INTENTS,
    build_demo_corpus,
    build_demo_split,
    generate_descriptions,
    generate_mock_corpus,
)

__all__ = [
    "TEST_INTENTS",
    "TRAIN_INTENTS",
    "build_demo_corpus",
    "build_demo_split",
    "generate_descriptions",
    "generate_mock_corpus",
]
