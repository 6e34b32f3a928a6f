"""Episodic training of the joint model.

One optimizer step per episode. Episode ``i`` of the run (counted across
epochs) is drawn from the ``sampler`` stream with index ``i`` and its
dropout masks come from the ``dropout`` stream with the same index, so a run
is a pure function of the split and the config.
"""

from __future__ import annotations

import logging
import math
import os
import time
from collections.abc import Mapping
from dataclasses import dataclass
from dataclasses import field as dataclass_field
from typing import Any

import fsspec

from protojoint import checkpoint, utils
from protojoint.config import TrainConfig, get_checkpoint_backend
from protojoint.corpus import Corpus, SplitSet
from protojoint.encoder import Describe
from protojoint.evaluation import run_test_episodes
from protojoint.exceptions import DomainError, NonFiniteLossError, SamplerError
from protojoint.model import LOSS_TERMS, Model, Prediction, enabled_terms, loss_weights
from protojoint.optim import BaseOptimizer, build_optimizer
from protojoint.sampler import Episode, SamplerConfig, check_preconditions, sample_episode

log = logging.getLogger(__name__)

REPORT_FILE = "report.jsonl"
CONFIG_FILE = "config.txt"
FAILED_EPISODE_FILE = "failed_episode.json"
CHECKPOINT_DIR = "checkpoints"
BEST_STEM = "best"


def total_loss(parts: Mapping[str, float], config: TrainConfig) -> float:
    """Weighted sum of the loss terms the mode enables.

    Terms the mode disables are ignored even when present in ``parts``.
    """
    weights = loss_weights(config)
    return sum(weights[term] * parts[term] for term in enabled_terms(config))


@dataclass
class EpochRecord:
    """Per-epoch training summary.

    Attributes:
        epoch: 1-based epoch number.
        losses: Mean of every computed loss term and of the total.
        episodes: Loss values of each episode.
        dev_ic_accuracy: Mean dev intent accuracy, when a dev split is used.
        dev_sf_f1: Mean dev span F1, when a dev split is used.
        skipped_ic: Queries without an intent contrastive positive.
        skipped_sf: Query tokens skipped by the slot contrastive loss.
        unscorable_tokens: Query tokens without a slot prototype.
        wall_time: Seconds spent in the epoch; not part of the record.
    """

    epoch: int
    losses: dict[str, float]
    episodes: list[dict[str, float]]
    dev_ic_accuracy: float | None = None
    dev_sf_f1: float | None = None
    skipped_ic: int = 0
    skipped_sf: int = 0
    unscorable_tokens: int = 0
    wall_time: float = 0.0

    def to_record(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "losses": self.losses,
            "episodes": self.episodes,
            "dev_ic_accuracy": self.dev_ic_accuracy,
            "dev_sf_f1": self.dev_sf_f1,
            "skipped_ic": self.skipped_ic,
            "skipped_sf": self.skipped_sf,
            "unscorable_tokens": self.unscorable_tokens,
        }


@dataclass
class TrainReport:
    records: list[EpochRecord] = dataclass_field(default_factory=list)
    checkpoints: list[str] = dataclass_field(default_factory=list)
    best_epoch: int | None = None
    best_dev: float | None = None

    @property
    def wall_time(self) -> float:
        return sum(record.wall_time for record in self.records)

    def trajectory(self, term: str = "total") -> list[float]:
        """Per-episode values of one loss term over the whole run."""
        return [episode[term] for record in self.records for episode in record.episodes]


def _as_split(split: SplitSet | Corpus, dev: Corpus | None) -> tuple[Corpus, Corpus | None]:
    if isinstance(split, SplitSet):
        return split.train, dev if dev is not None else split.dev
    return split, dev


def _usable_dev(dev: Corpus | None) -> Corpus | None:
    if dev is None or not len(dev):
        return None
    try:
        check_preconditions(dev)
    except SamplerError as err:
        log.warning("Dev split is not usable for evaluation: %s", err)
        return None
    return dev


def train_step(
    model: Model,
    optimizer: BaseOptimizer,
    episode: Episode,
    describe: Describe,
    index: int,
) -> tuple[dict[str, float], dict[str, int]]:
    """Forward, backward and one optimizer step on ``episode``.

    Returns the loss values and the skipped/unscorable counts.

    Raises:
        NonFiniteLossError: the loss or an intermediate value is not finite.
    """
    config = model.config
    rng = utils.make_rng(config.seed, utils.STREAM_DROPOUT, index)
    trace = dict(episode.seed_trace.to_record())

    try:
        output = model.forward(episode, describe, training=True, rng=rng)
        values = output.values()
        if not math.isfinite(values["total"]):
            raise NonFiniteLossError(f"episode {index}: loss is {values['total']}", trace)
        grads = output.graph.gradients(output.total)  # type: ignore
    except DomainError as err:
        raise NonFiniteLossError(f"episode {index}: {err}", trace) from err

    optimizer.step(model.parameters(), grads)
    counts = {
        "skipped_ic": output.skipped_ic,
        "skipped_sf": output.skipped_sf,
        "unscorable_tokens": output.unscorable_tokens,
    }
    return values, counts


def _mean_losses(episodes: list[dict[str, float]]) -> dict[str, float]:
    keys = [term for term in (*LOSS_TERMS, "total") if term in episodes[0]]
    return {term: sum(e[term] for e in episodes) / len(episodes) for term in keys}


def _dev_score(model: Model, dev: Corpus, config: TrainConfig) -> tuple[float, float]:
    report = run_test_episodes(
        model,
        dev,
        config.dev_episodes,
        config.u_max,
        config.seed,
        stream=utils.STREAM_DEV,
        max_retries=config.max_retries,
    )
    return report.ic_accuracy["mean"], report.sf_f1_span["mean"]


def train(
    split: SplitSet | Corpus,
    config: TrainConfig,
    out_dir: str | None = None,
    dev: Corpus | None = None,
    model: Model | None = None,
) -> tuple[Model, TrainReport]:
    """Train a model on the training split.

    Args:
        split: A split set (its dev part is used for model selection) or a
            training corpus.
        config: Resolved configuration.
        out_dir: Receives ``report.jsonl``, ``config.txt``, per-epoch
            checkpoints, the best-dev checkpoint and the final ``model``
            checkpoint. Nothing is written when omitted.
        dev: Dev corpus overriding the split's own.
        model: Start from this model instead of a fresh one.

    Raises:
        SamplerError: the training split cannot host an episode.
        NonFiniteLossError: an episode produced a non-finite loss; its seed
            trace is written to ``failed_episode.json``.
    """
    train_split, dev_split = _as_split(split, dev)
    check_preconditions(train_split)
    dev_split = _usable_dev(dev_split)

    model = model or Model.create(train_split, config)
    optimizer = build_optimizer(config)
    sampler = SamplerConfig(u_max=config.u_max, seed=config.seed, max_retries=config.max_retries)
    backend = get_checkpoint_backend(config.checkpoint_format)
    report = TrainReport()

    if out_dir:
        config_path = os.path.join(out_dir, CONFIG_FILE)
        utils.ensure_parent(config_path)
        with fsspec.open(config_path, "w", encoding="utf-8") as f:
            f.write(config.to_text())  # type: ignore

    log.info(
        "Training mode=%s for %d epochs x %d episodes on %d intents",
        config.mode,
        config.epochs,
        config.episodes_per_epoch,
        len(train_split.intent_inventory),
    )

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        episodes: list[dict[str, float]] = []
        totals = {"skipped_ic": 0, "skipped_sf": 0, "unscorable_tokens": 0}

        for step in range(config.episodes_per_epoch):
            index = (epoch - 1) * config.episodes_per_epoch + step
            episode = sample_episode(train_split, sampler, index=index)
            try:
                values, counts = train_step(model, optimizer, episode, train_split.describe, index)
            except NonFiniteLossError as err:
                if out_dir:
                    utils.write_json(os.path.join(out_dir, FAILED_EPISODE_FILE), err.seed_trace)
                raise

            episodes.append(values)
            for key, count in counts.items():
                totals[key] += count

        record = EpochRecord(epoch, _mean_losses(episodes), episodes, **totals)
        if dev_split is not None:
            record.dev_ic_accuracy, record.dev_sf_f1 = _dev_score(model, dev_split, config)
        record.wall_time = time.perf_counter() - started
        report.records.append(record)

        log.info(
            "Epoch %d: loss %.4f dev acc %s dev f1 %s (%.1fs)",
            epoch,
            record.losses["total"],
            "-" if record.dev_ic_accuracy is None else f"{record.dev_ic_accuracy:.4f}",
            "-" if record.dev_sf_f1 is None else f"{record.dev_sf_f1:.4f}",
            record.wall_time,
        )
        if totals["skipped_ic"] or totals["skipped_sf"] or totals["unscorable_tokens"]:
            log.debug("Epoch %d skipped/unscorable counts: %s", epoch, totals)

        if out_dir:
            _write_checkpoints(model, report, record, out_dir, backend)

    if out_dir:
        utils.write_jsonl(os.path.join(out_dir, REPORT_FILE), (record.to_record() for record in report.records))
        report.checkpoints.append(checkpoint.save_model(model, out_dir, backend=backend))

    return model, report


def _write_checkpoints(
    model: Model,
    report: TrainReport,
    record: EpochRecord,
    out_dir: str,
    backend: checkpoint.CheckpointBackend,
) -> None:
    extra = {"epoch": record.epoch}
    stem = f"epoch-{record.epoch:03d}"
    path = checkpoint.save_model(model, os.path.join(out_dir, CHECKPOINT_DIR), stem, backend, extra)
    report.checkpoints.append(path)

    score = record.dev_ic_accuracy
    if score is None or (report.best_dev is not None and score <= report.best_dev):
        return

    report.best_dev = score
    report.best_epoch = record.epoch
    checkpoint.save_model(model, out_dir, BEST_STEM, backend, extra)
    log.debug("New best dev accuracy %.4f at epoch %d", score, record.epoch)


def predict(model: Model, episode: Episode, describe: Describe) -> list[Prediction]:
    """Query predictions with a label store private to this call."""
    return model.evaluation_copy().predict(episode, describe)
