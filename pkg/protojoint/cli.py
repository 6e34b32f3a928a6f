"""Command line interface.

Every command writes one ``manifest.json`` next to its outputs. Exit codes:
0 on success, 1 for invalid input or usage, 2 when a run fails.
"""

from __future__ import annotations

import logging
import os
import sys
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from dataclasses import field as dataclass_field
from datetime import datetime, timezone
from typing import Any

import click

from protojoint import __version__, utils
from protojoint.checkpoint import load_model
from protojoint.config import TrainConfig, parse_config
from protojoint.corpus import (
    Corpus,
    SplitSet,
    load_corpus,
    load_split,
    prefix_slot_labels,
    save_split,
    split_by_intent,
    write_corpus,
)
from protojoint.evaluation import ablate, export_embeddings, run_test_episodes
from protojoint.exceptions import ProtojointError, RuntimeFailure, ValidationError
from protojoint.exporters import export_table
from protojoint.model import Model
from protojoint.sampler import SamplerConfig, sample_episodes, write_episodes
from protojoint.table import ablation_table, corpus_table, evaluation_table, training_table
from protojoint.trainer import train

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)-5.5s [%(name)s] %(message)s"
MANIFEST_FILE = "manifest.json"
SEED_STREAMS = (
    utils.STREAM_SAMPLER,
    utils.STREAM_INIT,
    utils.STREAM_DROPOUT,
    utils.STREAM_EVAL,
    utils.STREAM_SPLIT,
    utils.STREAM_DEV,
)
DEFAULT_FRACTIONS = "0.7,0.15,0.15"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    """What a command ran with and what it produced.

    Attributes:
        command: Subcommand name.
        config: Resolved configuration values.
        seeds: Master seed and every derived stream seed.
        inputs: Input paths by role.
        outputs: Output paths by role.
        version: Package version.
        started: UTC start timestamp.
        finished: UTC end timestamp.
    """

    command: str
    config: dict[str, Any] = dataclass_field(default_factory=dict)
    seeds: dict[str, Any] = dataclass_field(default_factory=dict)
    inputs: dict[str, str] = dataclass_field(default_factory=dict)
    outputs: dict[str, str] = dataclass_field(default_factory=dict)
    version: str = __version__
    started: str = dataclass_field(default_factory=_now)
    finished: str | None = None

    def use_seed(self, seed: int) -> None:
        self.seeds = {"master": seed, "streams": {name: utils.derive_seed(seed, name) for name in SEED_STREAMS}}

    def write(self, directory: str) -> str:
        self.finished = _now()
        path = os.path.join(directory, MANIFEST_FILE)
        utils.write_json(path, asdict(self))
        return path


def _fractions(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in value.split(","))
    except ValueError as err:
        raise ValidationError(f"cannot parse fractions {value!r}", module="cli") from err


def _load_train_config(config_path: str | None, overrides: dict[str, Any], settings: Sequence[str]) -> TrainConfig:
    values = dict(overrides)
    for setting in settings:
        if "=" not in setting:
            raise ValidationError(f"expected key=value, got {setting!r}", module="cli")
        key, raw = setting.split("=", 1)
        values[key.strip()] = raw.strip()
    return parse_config(config_path, values)


def _split_part(split: SplitSet, part: str) -> Corpus:
    return split.parts()[part]


def config_options(func: Any) -> Any:
    """Flags overriding file values for the most used training keys."""
    options = [
        click.option("--config", "config_path", help="Flat key=value config file."),
        click.option("--set", "settings", multiple=True, help="Override any key: --set key=value."),
        click.option("--mode", type=click.Choice(["oo", "wo", "ww"])),
        click.option("--lambda", "lambda_", type=float),
        click.option("--gamma", type=float),
        click.option("--delta", type=float),
        click.option("--tau", type=float),
        click.option("--epochs", type=int),
        click.option("--episodes-per-epoch", type=int),
        click.option("--learning-rate", type=float),
        click.option("--u-max", type=int),
        click.option("--window", type=int),
        click.option("--seed", type=int),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _overrides(**flags: Any) -> dict[str, Any]:
    renamed = {"lambda" if key == "lambda_" else key: value for key, value in flags.items()}
    return {key: value for key, value in renamed.items() if value is not None}


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="protojoint")
@click.option("-v", "--verbose", is_flag=True, help="Log debug messages.")
def protojoint(verbose: bool):
    """Few-shot joint intent classification and slot filling."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)


@protojoint.command()
@click.option("--corpus", help="JSON lines corpus or seq.in/seq.out/label directory.")
@click.option("--out", "out_dir", required=True, help="Split directory to write.")
@click.option("--descriptions", help="JSON sidecar of label description overrides.")
@click.option(
    "--split", "fractions", default=DEFAULT_FRACTIONS, show_default=True, help="train,dev,test mass fractions."
)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--prefix-slots", is_flag=True, help="Prefix slot types with their intent.")
@click.option("--demo", is_flag=True, help="Use the bundled synthetic corpus.")
def ingest(
    corpus: str | None,
    out_dir: str,
    descriptions: str | None,
    fractions: str,
    seed: int,
    prefix_slots: bool,
    demo: bool,
):
    """Validate a corpus and split its intent classes into train/dev/test."""
    manifest = RunManifest("ingest")
    manifest.use_seed(seed)

    if demo:
        if corpus or prefix_slots:
            raise click.UsageError("--demo cannot be combined with --corpus or --prefix-slots")

        from protojoint_demo import build_demo_split  # noqa: PLC0415

        split = build_demo_split(seed=seed)
        parts = (len(split.train), len(split.dev), len(split.test))
        ratios = tuple(n / sum(parts) for n in parts)
        manifest.inputs["corpus"] = "demo"
    else:
        if not corpus:
            raise ValidationError("a corpus path is required unless --demo is given", module="cli")
        loaded = load_corpus(corpus, descriptions)
        if prefix_slots:
            loaded = prefix_slot_labels(loaded)
        ratios = _fractions(fractions)
        split = split_by_intent(loaded, ratios, seed)
        manifest.inputs["corpus"] = corpus

    manifest.outputs.update(save_split(split, out_dir, seed, ratios))
    for name, part in split.parts().items():
        click.echo(f"{name}: {len(part.intent_inventory)} intents, {len(part)} utterances")
    click.echo(corpus_table(split.train.summary()).render())
    manifest.write(out_dir)


@protojoint.command()
@click.option("--split", "split_dir", required=True, help="Split directory.")
@click.option("--part", type=click.Choice(["train", "dev", "test"]), default="train", show_default=True)
@click.option("--episodes", default=100, show_default=True, type=int)
@click.option("--u-max", default=20, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--max-retries", default=100, show_default=True, type=int)
@click.option("--out", required=True, help="Episode JSON lines file.")
def sample(split_dir: str, part: str, episodes: int, u_max: int, seed: int, max_retries: int, out: str):
    """Draw episodes and write them as JSON lines."""
    manifest = RunManifest("sample", inputs={"split": split_dir})
    manifest.use_seed(seed)

    config = SamplerConfig(u_max=u_max, seed=seed, episodes=episodes, max_retries=max_retries)
    manifest.config = asdict(config)
    count = write_episodes(out, sample_episodes(_split_part(load_split(split_dir), part), config), config)

    manifest.outputs["episodes"] = out
    click.echo(f"Wrote {count} episodes to {out}")
    manifest.write(os.path.dirname(os.path.abspath(out)))


@protojoint.command(name="train")
@click.option("--split", "split_dir", required=True, help="Split directory.")
@click.option("--out", "out_dir", required=True, help="Run directory.")
@config_options
def train_command(split_dir: str, out_dir: str, config_path: str | None, settings: tuple[str, ...], **flags: Any):
    """Train a model with episodic optimization."""
    config = _load_train_config(config_path, _overrides(**flags), settings)
    manifest = RunManifest("train", config=config.as_dict(), inputs={"split": split_dir})
    manifest.use_seed(config.seed)
    if config_path:
        manifest.inputs["config"] = config_path

    _, report = train(load_split(split_dir), config, out_dir)

    manifest.outputs["report"] = os.path.join(out_dir, "report.jsonl")
    manifest.outputs["model"] = report.checkpoints[-1]
    click.echo(training_table(report).render())
    manifest.write(out_dir)


@protojoint.command()
@click.option("--model", "model_path", required=True, help="Run directory or checkpoint file.")
@click.option("--split", "split_dir", required=True, help="Split directory.")
@click.option("--part", type=click.Choice(["train", "dev", "test"]), default="test", show_default=True)
@click.option("--episodes", default=100, show_default=True, type=int)
@click.option("--u-max", default=20, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, help="Report JSON file.")
def evaluate(model_path: str, split_dir: str, part: str, episodes: int, u_max: int, seed: int, out: str):
    """Evaluate a trained model on freshly sampled test episodes."""
    manifest = RunManifest("evaluate", inputs={"model": model_path, "split": split_dir})
    manifest.use_seed(seed)

    model = load_model(model_path)
    manifest.config = model.config.as_dict()
    report = run_test_episodes(model, _split_part(load_split(split_dir), part), episodes, u_max, seed)

    utils.write_json(out, report.to_record())
    manifest.outputs["report"] = out
    click.echo(
        f"IC accuracy {report.ic_accuracy['mean']:.4f} +/- {report.ic_accuracy['std']:.4f}, "
        f"SF span F1 {report.sf_f1_span['mean']:.4f} +/- {report.sf_f1_span['std']:.4f}",
    )
    click.echo(evaluation_table(report).render())
    manifest.write(os.path.dirname(os.path.abspath(out)))


@protojoint.command(name="ablate")
@click.option("--split", "split_dir", required=True, help="Split directory.")
@click.option("--out", "out_dir", required=True, help="Ablation directory.")
@click.option("--test-episodes", default=100, show_default=True, type=int)
@click.option("--with-interaction", is_flag=True, help="Add single-direction interaction rows.")
@click.option("--table-format", default="csv", show_default=True, help="Comparison table format.")
@config_options
def ablate_command(
    split_dir: str,
    out_dir: str,
    test_episodes: int,
    with_interaction: bool,
    table_format: str,
    config_path: str | None,
    settings: tuple[str, ...],
    **flags: Any,
):
    """Train and evaluate the oo, wo and ww loss modes on shared seeds."""
    config = _load_train_config(config_path, _overrides(**flags), settings)
    manifest = RunManifest("ablate", config=config.as_dict(), inputs={"split": split_dir})
    manifest.use_seed(config.seed)

    result = ablate(load_split(split_dir), config, out_dir, test_episodes, with_interaction)

    for name, report in result.reports.items():
        path = os.path.join(out_dir, name.replace("/", "-"), "eval.json")
        utils.write_json(path, report.to_record())
        manifest.outputs[f"report:{name}"] = path

    table = ablation_table(result)
    exporter = table.get_exporter(table_format)
    if exporter is None:
        raise ValidationError(f"unknown table format {table_format!r}", module="cli")
    manifest.outputs["table"] = export_table(table, os.path.join(out_dir, f"ablation{exporter.extension}"))
    click.echo(table.render())
    manifest.write(out_dir)


@protojoint.command(name="export-embeddings")
@click.option("--model", "model_path", help="Run directory or checkpoint file.")
@click.option("--untrained", is_flag=True, help="Export a freshly initialized model instead.")
@click.option("--split", "split_dir", required=True, help="Split directory.")
@click.option("--part", type=click.Choice(["train", "dev", "test"]), default="test", show_default=True)
@click.option("--episodes", default=10, show_default=True, type=int)
@click.option("--u-max", default=20, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--config", "config_path", help="Config for --untrained.")
@click.option("--out", required=True, help="JSON lines or .parquet file.")
def export_embeddings_command(
    model_path: str | None,
    untrained: bool,
    split_dir: str,
    part: str,
    episodes: int,
    u_max: int,
    seed: int,
    config_path: str | None,
    out: str,
):
    """Write (id, intent, z, c) rows for the utterances of sampled episodes."""
    manifest = RunManifest("export-embeddings", inputs={"split": split_dir})
    manifest.use_seed(seed)
    split = load_split(split_dir)

    if untrained:
        model = Model.create(split.train, parse_config(config_path, {"seed": seed}))
    elif model_path:
        model = load_model(model_path)
        manifest.inputs["model"] = model_path
    else:
        raise ValidationError("either --model or --untrained is required", module="cli")

    manifest.config = model.config.as_dict()
    corpus = _split_part(split, part)
    sampler = SamplerConfig(u_max=u_max, seed=seed, episodes=episodes, stream=utils.STREAM_EVAL)
    count = export_embeddings(model, list(sample_episodes(corpus, sampler)), out, corpus.describe)

    manifest.outputs["embeddings"] = out
    click.echo(f"Wrote {count} embedding rows to {out}")
    manifest.write(os.path.dirname(os.path.abspath(out)))


@protojoint.command()
@click.option("--out", "out_dir", required=True, help="Directory for the synthetic corpus.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--utterances", default=40, show_default=True, type=int, help="Utterances per intent.")
def demo(out_dir: str, seed: int, utterances: int):
    """Write the bundled synthetic corpus and its ready-made split."""
    from protojoint_demo import build_demo_corpus, build_demo_split, generate_descriptions  # noqa: PLC0415

    manifest = RunManifest("demo")
    manifest.use_seed(seed)

    corpus = build_demo_corpus(utterances, seed)
    manifest.outputs["corpus"] = os.path.join(out_dir, "corpus.jsonl")
    manifest.outputs["descriptions"] = os.path.join(out_dir, "descriptions.json")
    write_corpus(corpus, manifest.outputs["corpus"])
    utils.write_json(manifest.outputs["descriptions"], generate_descriptions())

    split = build_demo_split(utterances, seed)
    sizes = [len(part) for part in split.parts().values()]
    save_split(split, os.path.join(out_dir, "split"), seed, [n / sum(sizes) for n in sizes])
    manifest.outputs["split"] = os.path.join(out_dir, "split")

    click.echo(corpus_table(corpus.summary()).render())
    manifest.write(out_dir)


def _origin(err: BaseException) -> str:
    """Innermost package module the error passed through, ``cli`` if none."""
    origin = "cli"
    tb = err.__traceback__
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("protojoint."):
            origin = name.rsplit(".", 1)[-1]
        tb = tb.tb_next
    return origin


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and map the outcome to an exit code."""
    try:
        args = list(argv) if argv is not None else None
        result = protojoint.main(args=args, prog_name="protojoint", standalone_mode=False)
    except click.exceptions.UsageError as err:
        err.show()
        return 1
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except ValidationError as err:
        click.echo(f"error [{err.module}]: {err}", err=True)
        return 1
    except RuntimeFailure as err:
        click.echo(f"error [{err.module}]: {err}", err=True)
        return 2
    except ProtojointError as err:
        click.echo(f"error [{err.module}]: {err}", err=True)
        return 2
    except click.ClickException as err:
        err.show()
        return 1
    except Exception as err:  # noqa: BLE001
        log.debug("Unhandled error", exc_info=True)
        click.echo(f"error [{_origin(err)}]: {type(err).__name__}: {err}", err=True)
        return 2

    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
