from __future__ import annotations

import decimal
import hashlib
import json
import logging
import os
from collections.abc import Iterable, Iterator
from typing import Any

import fsspec
import numpy as np

from protojoint.exceptions import ValidationError

log = logging.getLogger(__name__)

# named random streams derived from one master seed
STREAM_SAMPLER = "sampler"
STREAM_INIT = "init"
STREAM_DROPOUT = "dropout"
STREAM_EVAL = "eval"
STREAM_SPLIT = "split"
STREAM_DEV = "dev"


def derive_seed(seed: int, name: str) -> int:
    """Derive a 64-bit seed for the named stream from the master seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, name: str, *spawn_key: int) -> np.random.Generator:
    """Return an independent generator for ``name``, optionally keyed by an index."""
    return np.random.default_rng(np.random.SeedSequence(derive_seed(seed, name), spawn_key=spawn_key))


class ProtojointJSONEncoder(json.JSONEncoder):
    """JSON encoder that handles numpy values and decimals."""

    def default(self, o: Any) -> Any:
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, decimal.Decimal):
            return float(o)
        if isinstance(o, (set, frozenset, tuple)):
            return list(o)
        # numpy scalars expose .item() to convert to a Python native type
        if hasattr(o, "item"):
            return o.item()
        return super().default(o)


def dumps(value: Any, indent: int | None = None) -> str:
    """Serialize deterministically: sorted keys and fixed separators."""
    separators = (",", ": ") if indent else (",", ":")
    return json.dumps(value, cls=ProtojointJSONEncoder, sort_keys=True, indent=indent, separators=separators)


def write_json(path: str, value: Any) -> None:
    ensure_parent(path)
    with fsspec.open(path, "w", encoding="utf-8") as f:
        f.write(dumps(value, indent=2) + "\n")  # type: ignore


def read_json(path: str) -> Any:
    with fsspec.open(path, "r", encoding="utf-8") as f:
        return json.load(f)  # type: ignore


def write_jsonl(path: str, rows: Iterable[Any]) -> int:
    ensure_parent(path)
    count = 0
    with fsspec.open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(dumps(row) + "\n")  # type: ignore
            count += 1
    return count


def read_jsonl(path: str, module: str = "utils") -> Iterator[tuple[int, Any]]:
    """Yield ``(line_number, record)`` pairs, skipping blank lines.

    Raises:
        ValidationError: the file is missing or a line is not valid JSON. The
            error carries ``module`` as its provenance.
    """
    try:
        with fsspec.open(path, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):  # type: ignore
                if not line.strip():
                    continue

                try:
                    record = json.loads(line)
                except json.JSONDecodeError as err:
                    message = f"malformed record at line {number} of {path}: {err.msg}"
                    raise ValidationError(message, module=module) from err

                yield number, record
    except (FileNotFoundError, IsADirectoryError) as err:
        raise ValidationError(f"cannot read {path}: {err}", module=module) from err


def ensure_parent(path: str) -> None:
    if "://" in path:
        return

    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
