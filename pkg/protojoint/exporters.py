from __future__ import annotations

import csv
import json
import logging
import os
from io import StringIO
from typing import TYPE_CHECKING

import fsspec
import yaml

from protojoint import utils
from protojoint.exceptions import ValidationError

if TYPE_CHECKING:
    from protojoint.table import ReportTable


log = logging.getLogger(__name__)


class ExporterBase:
    """Base class for report table exporters."""

    name: str
    label: str
    mime_type: str
    extension: str

    @classmethod
    def export(cls, table: ReportTable) -> bytes:
        """Export the table data.

        Args:
            table: The report table.

        Returns:
            The exported data as bytes.
        """
        raise NotImplementedError


class _DelimitedExporter(ExporterBase):
    delimiter: str

    @classmethod
    def export(cls, table: ReportTable) -> bytes:
        output = StringIO()
        writer = csv.writer(output, delimiter=cls.delimiter, lineterminator="\n")

        writer.writerow([col.title for col in table.columns])
        for row in table.get_raw_data():
            writer.writerow(["" if row.get(col.field) is None else row[col.field] for col in table.columns])

        return output.getvalue().encode("utf-8")


class CSVExporter(_DelimitedExporter):
    """Comma-separated raw values under the column titles."""

    name = "csv"
    label = "CSV"
    mime_type = "text/csv"
    extension = ".csv"
    delimiter = ","


class TSVExporter(_DelimitedExporter):
    """Tab-separated raw values under the column titles."""

    name = "tsv"
    label = "TSV"
    mime_type = "text/tab-separated-values"
    extension = ".tsv"
    delimiter = "\t"


class JSONExporter(ExporterBase):
    """Raw row values as one indented JSON array."""

    name = "json"
    label = "JSON"
    mime_type = "application/json"
    extension = ".json"

    @classmethod
    def export(cls, table: ReportTable) -> bytes:
        return (utils.dumps(table.get_raw_data(), indent=2) + "\n").encode("utf-8")


class NDJSONExporter(ExporterBase):
    """Raw row values, one JSON object per line."""

    name = "ndjson"
    label = "NDJSON"
    mime_type = "application/x-ndjson"
    extension = ".jsonl"

    @classmethod
    def export(cls, table: ReportTable) -> bytes:
        lines = [utils.dumps(row) for row in table.get_raw_data()]
        return ("\n".join(lines) + "\n").encode("utf-8")


class YAMLExporter(ExporterBase):
    """Raw row values as a YAML list."""

    name = "yaml"
    label = "YAML"
    mime_type = "application/x-yaml"
    extension = ".yaml"

    @classmethod
    def export(cls, table: ReportTable) -> bytes:
        data = json.loads(utils.dumps(table.get_raw_data()))
        return yaml.safe_dump(data, allow_unicode=True, sort_keys=True).encode("utf-8")


class MarkdownExporter(ExporterBase):
    """Markdown exporter rendering formatted cells as a pipe table."""

    name = "markdown"
    label = "Markdown"
    mime_type = "text/markdown"
    extension = ".md"

    @classmethod
    def export(cls, table: ReportTable) -> bytes:
        header = [str(col.title) for col in table.columns]
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]

        for row in table.get_data():
            values = [row.get(col.field) for col in table.columns]
            cells = ["" if value is None else str(value).replace("|", "\\|") for value in values]
            lines.append("| " + " | ".join(cells) + " |")

        return ("\n".join(lines) + "\n").encode("utf-8")


DEFAULT_EXPORTERS: tuple[type[ExporterBase], ...] = (
    CSVExporter,
    TSVExporter,
    JSONExporter,
    NDJSONExporter,
    YAMLExporter,
    MarkdownExporter,
)


def exporter_for_path(table: ReportTable, path: str) -> type[ExporterBase]:
    extension = os.path.splitext(path)[1].lower()
    exporter = next((e for e in table.exporters if e.extension == extension), None)
    if exporter is None:
        raise ValidationError(f"no exporter for {extension or path!r}", module="exporters")
    return exporter


def export_table(table: ReportTable, path: str, fmt: str | None = None) -> str:
    """Write ``table`` to ``path`` using the named format or the one matching its extension."""
    exporter = table.get_exporter(fmt) if fmt else exporter_for_path(table, path)
    if exporter is None:
        raise ValidationError(f"unknown export format {fmt!r}", module="exporters")

    utils.ensure_parent(path)
    with fsspec.open(path, "wb") as f:
        f.write(exporter.export(table))  # type: ignore

    log.info("Wrote %s table to %s", exporter.label, path)
    return path
