import json
import os

import pytest

from protojoint import utils
from protojoint.cli import MANIFEST_FILE, dispatch

TINY = ["--epochs", "1", "--episodes-per-epoch", "2", "--u-max", "8", "--set", "d_w=8", "--set", "d_h=6"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert dispatch(["demo", "--out", str(root / "demo"), "--utterances", "12"]) == 0
    return root


def read_manifest(directory):
    with open(os.path.join(directory, MANIFEST_FILE)) as f:
        return json.load(f)


class TestDispatch:
    def test_help(self, capsys):
        assert dispatch(["--help"]) == 0
        assert "ablate" in capsys.readouterr().out

    def test_unknown_command(self):
        assert dispatch(["fly"]) == 1

    def test_missing_option(self):
        assert dispatch(["train", "--split", "nowhere"]) == 1

    def test_validation_error(self, tmp_path, capsys):
        assert dispatch(["ingest", "--out", str(tmp_path)]) == 1
        assert "error [cli]" in capsys.readouterr().err

    def test_mode_contradiction(self, workspace, tmp_path, capsys):
        split = str(workspace / "demo" / "split")

        assert dispatch(["train", "--split", split, "--out", str(tmp_path), "--mode", "oo", "--gamma", "0.5"]) == 1
        assert "error [config]" in capsys.readouterr().err

    def test_bad_setting(self, workspace, tmp_path):
        split = str(workspace / "demo" / "split")
        assert dispatch(["train", "--split", split, "--out", str(tmp_path), "--set", "tau"]) == 1

    def test_missing_checkpoint_is_a_runtime_failure(self, workspace, tmp_path):
        split = str(workspace / "demo" / "split")
        out = str(tmp_path / "eval.json")

        assert dispatch(["evaluate", "--model", str(tmp_path), "--split", split, "--out", out]) == 2

    def test_unexpected_error_is_a_runtime_failure(self, workspace, tmp_path, capsys):
        split = str(workspace / "demo" / "split")
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        out = str(blocker / "episodes.jsonl")

        assert dispatch(["sample", "--split", split, "--episodes", "1", "--u-max", "8", "--out", out]) == 2
        assert "error [utils]: FileExistsError" in capsys.readouterr().err

    def test_malformed_split_metadata(self, tmp_path, capsys):
        (tmp_path / "split.json").write_text("{broken")

        assert dispatch(["sample", "--split", str(tmp_path), "--out", str(tmp_path / "e.jsonl")]) == 1
        assert "error [corpus]: malformed split metadata" in capsys.readouterr().err


class TestPipeline:
    def test_demo(self, workspace):
        demo = workspace / "demo"

        assert (demo / "corpus.jsonl").exists()
        assert (demo / "descriptions.json").exists()
        assert (demo / "split" / "split.json").exists()
        assert read_manifest(demo)["command"] == "demo"

    def test_ingest(self, workspace):
        out = workspace / "ingested"
        corpus = str(workspace / "demo" / "corpus.jsonl")
        descriptions = str(workspace / "demo" / "descriptions.json")

        assert dispatch(["ingest", "--corpus", corpus, "--descriptions", descriptions, "--out", str(out)]) == 0

        manifest = read_manifest(out)
        assert manifest["inputs"]["corpus"] == corpus
        assert set(manifest["seeds"]["streams"]) == {"sampler", "init", "dropout", "eval", "split", "dev"}
        assert utils.read_json(str(out / "split.json"))["fractions"] == [0.7, 0.15, 0.15]

    def test_ingest_split_fractions(self, workspace):
        out = workspace / "ingested-even"
        corpus = str(workspace / "demo" / "corpus.jsonl")

        assert dispatch(["ingest", "--corpus", corpus, "--split", "0.4,0.3,0.3", "--out", str(out)]) == 0

        meta = utils.read_json(str(out / "split.json"))
        assert meta["fractions"] == [0.4, 0.3, 0.3]
        assert all(len(intents) == 3 for intents in meta["intents"].values())

    def test_ingest_prefix_slots(self, workspace):
        out = workspace / "ingested-prefixed"
        corpus = str(workspace / "demo" / "corpus.jsonl")

        assert dispatch(["ingest", "--corpus", corpus, "--prefix-slots", "--out", str(out)]) == 0
        assert utils.read_json(str(out / "split.json"))["prefixed"] is True

    def test_ingest_demo(self, workspace):
        out = workspace / "ingested-demo"

        assert dispatch(["ingest", "--demo", "--out", str(out)]) == 0
        assert read_manifest(out)["inputs"]["corpus"] == "demo"

    @pytest.mark.parametrize("extra", [["--prefix-slots"], ["--corpus", "corpus.jsonl"]])
    def test_ingest_demo_rejects_corpus_options(self, tmp_path, capsys, extra):
        assert dispatch(["ingest", "--demo", *extra, "--out", str(tmp_path)]) == 1
        assert "--demo cannot be combined" in capsys.readouterr().err

    def test_sample(self, workspace):
        out = workspace / "episodes" / "train.jsonl"
        split = str(workspace / "demo" / "split")

        assert dispatch(["sample", "--split", split, "--episodes", "3", "--u-max", "8", "--out", str(out)]) == 0
        assert len(list(utils.read_jsonl(str(out)))) == 3

    def test_train_evaluate_export(self, workspace):
        split = str(workspace / "demo" / "split")
        run = workspace / "run"

        assert dispatch(["train", "--split", split, "--out", str(run), *TINY]) == 0
        assert (run / "model.json").exists()
        assert read_manifest(run)["config"]["d_h"] == 6

        report = str(run / "eval.json")
        args = ["--split", split, "--episodes", "2", "--u-max", "8"]
        assert dispatch(["evaluate", "--model", str(run), *args, "--out", report]) == 0
        with open(report) as f:
            assert json.load(f)["episodes"] == 2

        embeddings = run / "embeddings.jsonl"
        assert dispatch(["export-embeddings", "--model", str(run), *args, "--out", str(embeddings)]) == 0
        assert embeddings.exists()

        untrained = run / "untrained.jsonl"
        assert dispatch(["export-embeddings", "--untrained", *args, "--out", str(untrained)]) == 0
        assert untrained.exists()

    def test_export_needs_a_model(self, workspace, tmp_path):
        split = str(workspace / "demo" / "split")
        assert dispatch(["export-embeddings", "--split", split, "--out", str(tmp_path / "e.jsonl")]) == 1

    def test_ablate(self, workspace):
        split = str(workspace / "demo" / "split")
        out = workspace / "ablation"

        args = ["ablate", "--split", split, "--out", str(out), "--test-episodes", "2", "--table-format", "markdown"]
        assert dispatch([*args, *TINY]) == 0

        assert (out / "ablation.md").exists()
        for row in ("oo", "wo", "ww"):
            assert (out / row / "eval.json").exists()
