import os

import numpy as np
import pytest

from protojoint import checkpoint
from protojoint.checkpoint import BinaryCheckpointBackend, CheckpointData, JsonCheckpointBackend
from protojoint.exceptions import CheckpointError
from protojoint.model import Model


@pytest.fixture
def data():
    return CheckpointData(
        {"b": np.array([[0.1, -0.2]]), "a": np.arange(6.0).reshape(2, 3) / 7.0},
        {"epoch": 3, "vocab": ["<unk>", "x"]},
    )


@pytest.fixture
def model(demo_split, demo_episode, tiny_config):
    model = Model.create(demo_split.train, tiny_config)
    model.prepare_labels(demo_episode.class_set, demo_episode.slot_label_set, demo_split.train.describe)
    return model


@pytest.mark.parametrize("backend", [JsonCheckpointBackend(), BinaryCheckpointBackend()], ids=["json", "binary"])
class TestBackends:
    def test_arrays_survive_exactly(self, tmp_path, backend, data):
        path = backend.path_for(str(tmp_path), "ck")
        backend.save(path, data)

        loaded = backend.load(path)

        assert loaded.meta == data.meta
        assert set(loaded.arrays) == {"a", "b"}
        for name, value in data.arrays.items():
            np.testing.assert_array_equal(loaded.arrays[name], value)

    def test_equal_data_gives_equal_bytes(self, tmp_path, backend, data):
        first = backend.path_for(str(tmp_path), "first")
        second = backend.path_for(str(tmp_path), "second")
        reordered = CheckpointData(dict(reversed(list(data.arrays.items()))), data.meta)

        backend.save(first, data)
        backend.save(second, reordered)

        with open(first, "rb") as f, open(second, "rb") as g:
            assert f.read() == g.read()

    def test_missing_file(self, tmp_path, backend):
        with pytest.raises(CheckpointError, match="cannot read"):
            backend.load(str(tmp_path / "absent"))

    def test_garbage(self, tmp_path, backend):
        path = tmp_path / "garbage"
        path.write_bytes(b"PJCK not really a checkpoint")

        with pytest.raises(CheckpointError, match="corrupt"):
            backend.load(str(path))


class TestBinaryLayout:
    def test_magic(self, tmp_path, data):
        path = str(tmp_path / "ck.pjck")
        BinaryCheckpointBackend().save(path, data)

        with open(path, "rb") as f:
            assert f.read(4) == b"PJCK"

    def test_truncated_payload(self, tmp_path, data):
        path = tmp_path / "ck.pjck"
        BinaryCheckpointBackend().save(str(path), data)
        path.write_bytes(path.read_bytes()[:-8])

        with pytest.raises(CheckpointError, match="truncated"):
            BinaryCheckpointBackend().load(str(path))


class TestModelCheckpoint:
    @pytest.mark.parametrize("fmt", ["json", "binary"])
    def test_round_trip(self, tmp_path, model, fmt):
        path = checkpoint.save_model(model, str(tmp_path), backend=checkpoint.get_checkpoint_backend(fmt))

        restored = checkpoint.model_from_data(checkpoint.backend_for_path(path).load(path))

        assert restored.checksum() == model.checksum()
        assert restored.config == model.config
        assert restored.encoder.vocab.tokens == model.encoder.vocab.tokens
        assert len(restored.labels) == len(model.labels)

    def test_extra_metadata(self, tmp_path, model):
        path = checkpoint.save_model(model, str(tmp_path), "epoch-001", extra={"epoch": 1})
        assert checkpoint.backend_for_path(path).load(path).meta["epoch"] == 1

    def test_missing_metadata(self):
        with pytest.raises(CheckpointError, match="lacks"):
            checkpoint.model_from_data(CheckpointData({}, {"vocab": []}))


class TestFindModel:
    def test_file_is_returned_as_is(self, tmp_path):
        path = str(tmp_path / "anything.json")
        assert checkpoint.find_model(path) == path

    def test_directory(self, tmp_path, model):
        path = checkpoint.save_model(model, str(tmp_path))
        assert checkpoint.find_model(str(tmp_path)) == path

    def test_binary_in_directory(self, tmp_path, model):
        checkpoint.save_model(model, str(tmp_path), backend=BinaryCheckpointBackend())
        assert checkpoint.find_model(str(tmp_path)) == os.path.join(str(tmp_path), "model.pjck")

    def test_empty_directory(self, tmp_path):
        with pytest.raises(CheckpointError, match="no model checkpoint"):
            checkpoint.find_model(str(tmp_path))
