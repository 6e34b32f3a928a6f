from __future__ import annotations

import base64
import json
import logging
import os
import struct
from abc import ABC, abstractmethod
from collections.abc import Mapping
from dataclasses import dataclass
from dataclasses import field as dataclass_field
from typing import Any

import fsspec
import numpy as np

from protojoint import __version__, utils
from protojoint.config import build_config, get_checkpoint_backend
from protojoint.encoder import EncoderParams, LabelStore, Vocab
from protojoint.exceptions import CheckpointError
from protojoint.model import Model
from protojoint.types import Matrix

log = logging.getLogger(__name__)

FORMAT_NAME = "protojoint-checkpoint"
FORMAT_VERSION = 1
BINARY_MAGIC = b"PJCK"
LABEL_PREFIX = "label."
MODEL_STEM = "model"
DTYPE = "<f8"


@dataclass
class CheckpointData:
    """Named float64 arrays plus JSON metadata.

    Attributes:
        arrays: Parameter arrays by name.
        meta: JSON-serializable metadata (vocabulary, config, epoch).
    """

    arrays: dict[str, Matrix]
    meta: dict[str, Any] = dataclass_field(default_factory=dict)


class CheckpointBackend(ABC):
    """Abstract checkpoint container.

    Implement this interface to store checkpoints in another format. Written
    bytes must depend only on the data, so equal models give equal files.
    """

    extension: str

    @abstractmethod
    def save(self, path: str, data: CheckpointData) -> None:
        """Write ``data`` to ``path``."""
        ...

    @abstractmethod
    def load(self, path: str) -> CheckpointData:
        """Read a container written by :meth:`save`."""
        ...

    def path_for(self, directory: str, stem: str) -> str:
        return os.path.join(directory, f"{stem}{self.extension}")


class _FileCheckpointBackend(CheckpointBackend, ABC):
    """Base class for file-based checkpoint backends.

    Subclasses only need to define:

    - ``extension``, e.g. ``".json"``
    - ``_read_data(raw)``: decode the file bytes
    - ``_write_data(data)``: encode the container bytes
    """

    @abstractmethod
    def _read_data(self, raw: bytes) -> CheckpointData: ...

    @abstractmethod
    def _write_data(self, data: CheckpointData) -> bytes: ...

    def save(self, path: str, data: CheckpointData) -> None:
        utils.ensure_parent(path)
        try:
            with fsspec.open(path, "wb") as f:
                f.write(self._write_data(data))  # type: ignore
        except OSError as err:
            raise CheckpointError(f"cannot write checkpoint {path}: {err}") from err

    def load(self, path: str) -> CheckpointData:
        try:
            with fsspec.open(path, "rb") as f:
                raw: bytes = f.read()  # type: ignore
        except OSError as err:
            raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err

        try:
            return self._read_data(raw)
        except (ValueError, KeyError, TypeError, struct.error) as err:
            raise CheckpointError(f"corrupt checkpoint {path}: {err}") from err


def _as_bytes(value: Matrix) -> bytes:
    return np.ascontiguousarray(value, dtype=DTYPE).tobytes()


def _from_bytes(raw: bytes, shape: list[int]) -> Matrix:
    return np.frombuffer(raw, dtype=DTYPE).astype(np.float64).reshape(shape)


class JsonCheckpointBackend(_FileCheckpointBackend):
    """Sorted JSON document with base64 little-endian float64 arrays."""

    extension = ".json"

    def _write_data(self, data: CheckpointData) -> bytes:
        document = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "meta": data.meta,
            "arrays": {
                name: {"shape": list(value.shape), "data": base64.b64encode(_as_bytes(value)).decode("ascii")}
                for name, value in data.arrays.items()
            },
        }
        return (utils.dumps(document) + "\n").encode("utf-8")

    def _read_data(self, raw: bytes) -> CheckpointData:
        document = json.loads(raw)
        if document.get("format") != FORMAT_NAME:
            raise ValueError("not a protojoint checkpoint")
        if document.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported version {document.get('version')}")

        arrays = {
            name: _from_bytes(base64.b64decode(entry["data"]), entry["shape"])
            for name, entry in document["arrays"].items()
        }
        return CheckpointData(arrays, document["meta"])


class BinaryCheckpointBackend(_FileCheckpointBackend):
    """``PJCK`` magic, version, JSON header length and header, then the raw array payload.

    The header lists every array's name, shape and byte offset in sorted name
    order.
    """

    extension = ".pjck"

    def _write_data(self, data: CheckpointData) -> bytes:
        entries: list[dict[str, Any]] = []
        chunks: list[bytes] = []
        offset = 0

        for name in sorted(data.arrays):
            chunk = _as_bytes(data.arrays[name])
            entries.append({"name": name, "shape": list(data.arrays[name].shape), "offset": offset})
            chunks.append(chunk)
            offset += len(chunk)

        header = utils.dumps({"meta": data.meta, "arrays": entries}).encode("utf-8")
        prefix = BINARY_MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header))
        return prefix + header + b"".join(chunks)

    def _read_data(self, raw: bytes) -> CheckpointData:
        if raw[:4] != BINARY_MAGIC:
            raise ValueError("bad magic")

        version, header_size = struct.unpack_from("<IQ", raw, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported version {version}")

        start = 4 + struct.calcsize("<IQ")
        header = json.loads(raw[start : start + header_size])
        payload = raw[start + header_size :]

        arrays: dict[str, Matrix] = {}
        for entry in header["arrays"]:
            size = int(np.prod(entry["shape"])) * np.dtype(DTYPE).itemsize
            chunk = payload[entry["offset"] : entry["offset"] + size]
            if len(chunk) != size:
                raise ValueError(f"truncated array {entry['name']}")
            arrays[entry["name"]] = _from_bytes(chunk, entry["shape"])

        return CheckpointData(arrays, header["meta"])


def backend_for_path(path: str) -> CheckpointBackend:
    if path.endswith(BinaryCheckpointBackend.extension):
        return BinaryCheckpointBackend()
    return JsonCheckpointBackend()


def model_data(model: Model, extra: Mapping[str, Any] | None = None) -> CheckpointData:
    meta = {
        "version": __version__,
        "vocab": model.encoder.vocab.tokens,
        "config": model.config.as_dict(),
        **(extra or {}),
    }
    return CheckpointData({name: value.copy() for name, value in model.parameters().items()}, meta)


def save_model(
    model: Model,
    directory: str,
    stem: str = MODEL_STEM,
    backend: CheckpointBackend | None = None,
    extra: Mapping[str, Any] | None = None,
) -> str:
    """Write the model checkpoint as ``<directory>/<stem><ext>``; returns the path."""
    backend = backend or get_checkpoint_backend(model.config.checkpoint_format)
    path = backend.path_for(directory, stem)
    backend.save(path, model_data(model, extra))
    log.debug("Wrote checkpoint %s", path)
    return path


def model_from_data(data: CheckpointData) -> Model:
    try:
        config = build_config(data.meta["config"])
        vocab = Vocab(list(data.meta["vocab"]))
    except KeyError as err:
        raise CheckpointError(f"checkpoint metadata lacks {err}") from err

    encoder_values = {name: v for name, v in data.arrays.items() if not name.startswith(LABEL_PREFIX)}
    label_values = {name: v for name, v in data.arrays.items() if name.startswith(LABEL_PREFIX)}

    encoder = EncoderParams(vocab, config.d_w, config.d_h, config.dropout, encoder_values)
    return Model(encoder, LabelStore(encoder.d, label_values), config)


def find_model(location: str) -> str:
    """Resolve a checkpoint file, or the ``model`` checkpoint inside a directory."""
    fs, _ = fsspec.core.url_to_fs(location)
    if not fs.isdir(location):
        return location

    for backend in (JsonCheckpointBackend(), BinaryCheckpointBackend()):
        path = backend.path_for(location, MODEL_STEM)
        if fs.exists(path):
            return path

    raise CheckpointError(f"no model checkpoint in {location}")


def load_model(location: str) -> Model:
    path = find_model(location)
    return model_from_data(backend_for_path(path).load(path))
