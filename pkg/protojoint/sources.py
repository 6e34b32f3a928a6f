from __future__ import annotations

import json
import logging
import posixpath
from collections.abc import Iterator
from typing import Any

import fsspec

from protojoint.exceptions import CorpusError

log = logging.getLogger(__name__)

SEQ_IN = "seq.in"
SEQ_OUT = "seq.out"
SEQ_LABEL = "label"


class BaseCorpusSource:
    """Produces raw utterance records together with their line numbers.

    Records are plain mappings with ``tokens``, ``intent`` and ``slots`` keys
    and an optional ``id``. Validation happens in :mod:`protojoint.corpus`.
    """

    def records(self) -> Iterator[tuple[int, dict[str, Any]]]:
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


class ListCorpusSource(BaseCorpusSource):
    """A source over records already in memory.

    This is useful for testing and demo purposes, when you already have data
    on your hand.

    Args:
        data: The list of record dictionaries
    """

    def __init__(self, data: list[dict[str, Any]]):
        self.data = data

    def records(self) -> Iterator[tuple[int, dict[str, Any]]]:
        yield from enumerate(self.data, start=1)


class JsonLinesSource(BaseCorpusSource):
    """UTF-8 JSON lines, one utterance object per line.

    Args:
        path: Local path or any fsspec URL (``http(s)://`` goes through aiohttp)
    """

    def __init__(self, path: str):
        self.path = path

    def describe(self) -> str:
        return f"JSON lines {self.path}"

    def records(self) -> Iterator[tuple[int, dict[str, Any]]]:
        try:
            with fsspec.open(self.path, "r", encoding="utf-8") as f:
                for number, line in enumerate(f, start=1):  # type: ignore
                    if not line.strip():
                        continue

                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as err:
                        raise CorpusError(f"malformed record at line {number}: {err.msg}") from err

                    if not isinstance(record, dict):
                        raise CorpusError(f"malformed record at line {number}: expected an object")

                    yield number, record
        except (FileNotFoundError, IsADirectoryError) as err:
            raise CorpusError(f"cannot read corpus {self.path}: {err}") from err


class SeqDirSource(BaseCorpusSource):
    """Directory with parallel ``seq.in``, ``seq.out`` and ``label`` files.

    Line ``n`` of each file holds the space-separated tokens, the
    space-separated slot labels and the intent of utterance ``n``.

    Args:
        path: Directory path or fsspec URL
    """

    def __init__(self, path: str):
        self.path = path.rstrip("/")

    def describe(self) -> str:
        return f"sequence directory {self.path}"

    def _lines(self, name: str) -> list[str]:
        try:
            with fsspec.open(posixpath.join(self.path, name), "r", encoding="utf-8") as f:
                return [line.rstrip("\n") for line in f]  # type: ignore
        except FileNotFoundError as err:
            raise CorpusError(f"missing {name} in {self.path}") from err

    def records(self) -> Iterator[tuple[int, dict[str, Any]]]:
        texts = self._lines(SEQ_IN)
        tags = self._lines(SEQ_OUT)
        intents = self._lines(SEQ_LABEL)

        if not len(texts) == len(tags) == len(intents):
            raise CorpusError(
                f"{SEQ_IN}, {SEQ_OUT} and {SEQ_LABEL} differ in length: {len(texts)}, {len(tags)}, {len(intents)}",
            )

        for number, (text, tag, intent) in enumerate(zip(texts, tags, intents), start=1):
            if not text.strip():
                continue

            yield number, {"tokens": text.split(), "slots": tag.split(), "intent": intent.strip()}


def guess_source(path: str) -> BaseCorpusSource:
    """Pick a source by the shape of ``path``.

    A directory holding ``seq.in`` is read as a :class:`SeqDirSource`,
    anything else as JSON lines.
    """
    fs, fs_path = fsspec.core.url_to_fs(path)

    if fs.isdir(fs_path):
        if fs.exists(posixpath.join(fs_path, SEQ_IN)):
            return SeqDirSource(path)
        raise CorpusError(f"{path} is a directory without {SEQ_IN}")

    return JsonLinesSource(path)
