from __future__ import annotations

import abc
import math
from typing import TYPE_CHECKING

from protojoint import types

if TYPE_CHECKING:
    from protojoint.table import ColumnDefinition, ReportTable


class BaseFormatter(abc.ABC):
    """Abstract base class for all cell formatters."""

    def __init__(
        self,
        column: ColumnDefinition,
        row: types.Row,
        initial_row: types.Row,
        table: ReportTable,
    ):
        self.column = column
        self.row = row
        self.initial_row = initial_row
        self.table = table

    @abc.abstractmethod
    def format(self, value: types.Value, options: types.Options) -> types.FormatterResult:
        raise NotImplementedError


def _missing(value: types.Value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


class FloatFormatter(BaseFormatter):
    """Renders a number with a fixed number of decimals.

    Options:
        - `digits` (int): Decimals to keep. Defaults to 4.
    """

    def format(self, value: types.Value, options: types.Options) -> types.FormatterResult:
        if _missing(value):
            return ""
        return f"{float(value):.{options.get('digits', 4)}f}"


class MeanStdFormatter(BaseFormatter):
    """Renders ``mean +/- std`` from the cell value and a sibling std column.

    Options:
        - `std_field` (str): Row field holding the standard deviation.
          Defaults to the column field with ``_mean`` replaced by ``_std``.
        - `digits` (int): Decimals to keep. Defaults to 4.
        - `percent` (bool): Scale both numbers by 100. Defaults to False.
    """

    def format(self, value: types.Value, options: types.Options) -> types.FormatterResult:
        if _missing(value):
            return ""

        std_field = options.get("std_field", self.column.field.replace("_mean", "_std"))
        std = self.initial_row.get(std_field, 0.0)
        scale = 100.0 if options.get("percent") else 1.0
        digits = options.get("digits", 4)
        return f"{float(value) * scale:.{digits}f} +/- {float(std) * scale:.{digits}f}"


class TrimStringFormatter(BaseFormatter):
    """Trims a string to a specified maximum length.

    Options:
        - `max_length` (int): The maximum length of the string. Defaults to 40.
        - `add_ellipsis` (bool): Whether to add "..." if the string is trimmed.
          Defaults to True.
    """

    def format(self, value: types.Value, options: types.Options) -> types.FormatterResult:
        if not isinstance(value, str):
            return ""

        max_length = options.get("max_length", 40)
        add_ellipsis = bool(options.get("add_ellipsis", True))

        if len(value) > max_length:
            trimmed = value[:max_length]
            return f"{trimmed}..." if add_ellipsis else trimmed

        return value
