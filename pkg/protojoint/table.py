"""Tabular run summaries: ablation comparison, evaluation breakdown, training curve, corpus mass."""

from __future__ import annotations

import copy
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field as dataclass_field
from typing import TYPE_CHECKING, Any

import pandas as pd

from protojoint import formatters, types
from protojoint.exporters import DEFAULT_EXPORTERS, ExporterBase

if TYPE_CHECKING:
    from protojoint.evaluation import AblationResult, EvalReport
    from protojoint.trainer import TrainReport


@dataclass(frozen=True)
class ColumnDefinition:
    """Column definition.

    Attributes:
        field: The field name in the row dictionary.
        title: The display title for the column. Defaults to a formatted version of `field`.
        formatters: Formatters applied to the cell value in order.
    """

    field: str
    title: str | None = None
    formatters: list[tuple[type[formatters.BaseFormatter], dict[str, Any]]] = dataclass_field(default_factory=list)

    def __post_init__(self):
        if self.title is None:
            object.__setattr__(self, "title", self.field.replace("_", " ").title())


@dataclass
class ReportTable:
    """A named table of rows with display columns and export formats.

    Attributes:
        name: Unique identifier for the table.
        rows: Raw row dictionaries.
        columns: (Optional) Display columns. Defaults to every field of the first row.
        exporters: (Optional) Exporter classes available for the table.
        placeholder: (Optional) Text rendered for an empty table.
    """

    name: str
    rows: list[types.Row]
    columns: list[ColumnDefinition] = dataclass_field(default_factory=list)
    exporters: list[type[ExporterBase]] = dataclass_field(default_factory=lambda: list(DEFAULT_EXPORTERS))
    placeholder: str = "No data found"

    def __post_init__(self):
        if not self.columns and self.rows:
            self.columns = [ColumnDefinition(field) for field in self.rows[0]]

    @classmethod
    def from_frame(cls, name: str, frame: pd.DataFrame, columns: list[ColumnDefinition] | None = None) -> ReportTable:
        rows = [{key: _native(value) for key, value in row.items()} for row in frame.to_dict(orient="records")]
        return cls(name, rows, columns or [])

    def get_raw_data(self) -> list[types.Row]:
        return [dict(row) for row in self.rows]

    def get_data(self) -> list[types.Row]:
        return [self._apply_formatters(dict(row)) for row in self.rows]

    def get_exporter(self, name: str) -> type[ExporterBase] | None:
        return next((e for e in self.exporters if e.name == name), None)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.get_raw_data())

    def render(self) -> str:
        """Plain-text rendering with formatted cells, for terminal summaries."""
        if not self.rows:
            return self.placeholder

        header = [str(col.title) for col in self.columns]
        body = [[str(row.get(col.field, "")) for col in self.columns] for row in self.get_data()]
        widths = [max(len(cell) for cell in column) for column in zip(header, *body, strict=True)]

        lines = ["  ".join(cell.ljust(width) for cell, width in zip(header, widths, strict=True)).rstrip()]
        lines.append("  ".join("-" * width for width in widths))
        for row in body:
            lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths, strict=True)).rstrip())
        return "\n".join(lines)

    def _apply_formatters(self, row: dict[str, Any]) -> dict[str, Any]:
        """Apply formatters to each cell in a row."""
        formatted_row = copy.deepcopy(row)

        for column in self.columns:
            cell_value = row.get(column.field)

            if not column.formatters:
                continue

            for formatter_class, formatter_options in column.formatters:
                cell_value = formatter_class(column, formatted_row, row, self).format(cell_value, formatter_options)

            formatted_row[column.field] = cell_value

        return formatted_row


def _native(value: Any) -> Any:
    # numpy scalars expose .item() to convert to a Python native type
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and value != value:  # noqa: PLR0124
        return None
    return value


def _mean_std(field: str, title: str) -> ColumnDefinition:
    return ColumnDefinition(field, title, [(formatters.MeanStdFormatter, {})])


def _number(field: str, title: str | None = None) -> ColumnDefinition:
    return ColumnDefinition(field, title, [(formatters.FloatFormatter, {})])


def ablation_table(result: AblationResult) -> ReportTable:
    return ReportTable.from_frame(
        "ablation",
        result.table(),
        [
            ColumnDefinition("row", "Row"),
            _mean_std("ic_accuracy_mean", "IC accuracy"),
            _mean_std("sf_f1_span_mean", "SF span F1"),
            _number("sf_f1_token_mean", "SF token F1"),
            _number("ic_scl", "Final L_IC_scl"),
            _number("sf_scl", "Final L_SF_scl"),
        ],
    )


def evaluation_table(report: EvalReport) -> ReportTable:
    """Per slot type span precision, recall and F1."""
    rows = [{"slot": kind, **scores} for kind, scores in report.per_label.items()]
    return ReportTable(
        "per_label",
        rows,
        [
            ColumnDefinition("slot", "Slot"),
            _number("precision", "P"),
            _number("recall", "R"),
            _number("f1", "F1"),
            ColumnDefinition("tp", "TP"),
            ColumnDefinition("fp", "FP"),
            ColumnDefinition("fn", "FN"),
        ],
    )


def training_table(report: TrainReport, terms: Sequence[str] = ("ic_pn", "sf_pn", "ic_scl", "sf_scl")) -> ReportTable:
    rows = []
    for record in report.records:
        row: dict[str, Any] = {"epoch": record.epoch, **{term: record.losses.get(term) for term in terms}}
        row.update(total=record.losses["total"], dev_ic=record.dev_ic_accuracy, dev_sf=record.dev_sf_f1)
        rows.append(row)

    return ReportTable(
        "training",
        rows,
        [
            ColumnDefinition("epoch", "Epoch"),
            *(_number(term, f"L_{term}") for term in terms),
            _number("total", "Total"),
            _number("dev_ic", "Dev IC acc"),
            _number("dev_sf", "Dev SF F1"),
        ],
    )


def corpus_table(summary: pd.DataFrame) -> ReportTable:
    return ReportTable.from_frame(
        "corpus",
        summary,
        [
            ColumnDefinition("intent", "Intent", [(formatters.TrimStringFormatter, {})]),
            ColumnDefinition("utterances", "Utterances"),
            ColumnDefinition("tokens", "Tokens"),
            ColumnDefinition("spans", "Slot spans"),
        ],
    )
