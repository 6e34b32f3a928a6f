import pytest

from protojoint import formatters, table


def _make_col(field="col", **kwargs):
    return table.ColumnDefinition(field=field, **kwargs)


def _fmt(formatter_class, value, options=None, col=None, row=None):
    """Instantiate a formatter and call format()."""
    col = col or _make_col()
    row = row or {}
    return formatter_class(col, row, row, table.ReportTable("test_table", [])).format(value, options or {})


class TestFloatFormatter:
    def test_default_digits(self):
        assert _fmt(formatters.FloatFormatter, 0.123456) == "0.1235"

    def test_custom_digits(self):
        assert _fmt(formatters.FloatFormatter, 2, {"digits": 1}) == "2.0"

    @pytest.mark.parametrize("value", [None, float("nan")])
    def test_missing(self, value):
        assert _fmt(formatters.FloatFormatter, value) == ""


class TestMeanStdFormatter:
    def test_reads_sibling_std(self):
        col = _make_col("ic_accuracy_mean")
        row = {"ic_accuracy_mean": 0.85, "ic_accuracy_std": 0.0067}

        assert _fmt(formatters.MeanStdFormatter, 0.85, col=col, row=row) == "0.8500 +/- 0.0067"

    def test_percent(self):
        col = _make_col("acc_mean")
        row = {"acc_mean": 0.8515, "acc_std": 0.0067}

        result = _fmt(formatters.MeanStdFormatter, 0.8515, {"percent": True, "digits": 2}, col=col, row=row)

        assert result == "85.15 +/- 0.67"

    def test_explicit_std_field(self):
        row = {"spread": 0.5}
        assert _fmt(formatters.MeanStdFormatter, 1.0, {"std_field": "spread", "digits": 1}, row=row) == "1.0 +/- 0.5"

    def test_missing_std_is_zero(self):
        assert _fmt(formatters.MeanStdFormatter, 1.0, {"digits": 0}, col=_make_col("x_mean")) == "1 +/- 0"

    def test_missing_value(self):
        assert _fmt(formatters.MeanStdFormatter, None) == ""


class TestTrimStringFormatter:
    def test_short_string_unchanged(self):
        assert _fmt(formatters.TrimStringFormatter, "BookFlight") == "BookFlight"

    def test_trimmed_with_ellipsis(self):
        assert _fmt(formatters.TrimStringFormatter, "abcdef", {"max_length": 3}) == "abc..."

    def test_trimmed_without_ellipsis(self):
        assert _fmt(formatters.TrimStringFormatter, "abcdef", {"max_length": 3, "add_ellipsis": False}) == "abc"

    def test_non_string(self):
        assert _fmt(formatters.TrimStringFormatter, 42) == ""
