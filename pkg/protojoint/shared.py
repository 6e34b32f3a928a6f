from . import exporters, formatters
from .checkpoint import BinaryCheckpointBackend, CheckpointBackend, JsonCheckpointBackend, load_model, save_model
from .config import TrainConfig, default_config, parse_config
from .corpus import Corpus, SplitSet, Utterance, load_corpus, load_split, save_split, split_by_intent
from .diffcore import DiffGraph, Tensor, check_gradients
from .evaluation import (
    EvalReport,
    ablate,
    embedding_separation,
    export_embeddings,
    ic_accuracy,
    run_test_episodes,
    sf_f1,
)
from .exceptions import ProtojointError, RuntimeFailure, ValidationError
from .model import Model, Prediction
from .sampler import Episode, SamplerConfig, sample_episode, sample_episodes
from .sources import BaseCorpusSource, JsonLinesSource, ListCorpusSource, SeqDirSource
from .table import ColumnDefinition, ReportTable
from .trainer import TrainReport, predict, total_loss, train
from .types import Row, Value

ALL_EXPORTERS = list(exporters.DEFAULT_EXPORTERS)

__all__ = [
    "ALL_EXPORTERS",
    "BaseCorpusSource",
    "BinaryCheckpointBackend",
    "CheckpointBackend",
    "ColumnDefinition",
    "Corpus",
    "DiffGraph",
    "Episode",
    "EvalReport",
    "JsonCheckpointBackend",
    "JsonLinesSource",
    "ListCorpusSource",
    "Model",
    "Prediction",
    "ProtojointError",
    "ReportTable",
    "Row",
    "RuntimeFailure",
    "SamplerConfig",
    "SeqDirSource",
    "SplitSet",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "Utterance",
    "ValidationError",
    "Value",
    "ablate",
    "check_gradients",
    "default_config",
    "embedding_separation",
    "export_embeddings",
    "exporters",
    "formatters",
    "ic_accuracy",
    "load_corpus",
    "load_model",
    "load_split",
    "parse_config",
    "predict",
    "run_test_episodes",
    "sample_episode",
    "sample_episodes",
    "save_model",
    "save_split",
    "sf_f1",
    "split_by_intent",
    "total_loss",
    "train",
]
