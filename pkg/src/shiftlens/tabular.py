"""Typed columnar tables, CSV IO, and key-based control/test pairing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PairingError, ValidationError

__all__ = [
    "DTYPES",
    "ROLES",
    "ColumnSchema",
    "Table",
    "PairedDataset",
    "validate_schema",
    "load_csv",
    "write_csv",
    "pair_tables",
]

DTYPES = ("numeric", "categorical", "boolean", "text")
ROLES = ("feature", "key", "target-metric", "quasi-identifier", "excluded", "ground-truth")

_TRUE_TOKENS = {"true", "1", "t", "yes"}
_FALSE_TOKENS = {"false", "0", "f", "no"}


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    dtype: str
    role: str = "feature"

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("column name must be non-empty")
        if self.dtype not in DTYPES:
            raise ValidationError(f"unknown dtype {self.dtype!r} for column {self.name!r}")
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r} for column {self.name!r}")


def validate_schema(schema: list[ColumnSchema]) -> None:
    """Structural checks: unique names, exactly one key, exactly one target metric."""
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValidationError(f"duplicate column names in schema: {dupes}")
    keys = [c for c in schema if c.role == "key"]
    if len(keys) != 1:
        raise ValidationError(f"schema must declare exactly one key column, found {len(keys)}")
    metrics = [c for c in schema if c.role == "target-metric"]
    if len(metrics) != 1:
        raise ValidationError(
            f"schema must declare exactly one target-metric column, found {len(metrics)}"
        )
    if metrics[0].dtype != "numeric":
        raise ValidationError("target-metric column must be numeric")


class Table:
    """Immutable-by-convention columnar table.

    numeric/boolean columns are float64 with NaN for missing; categorical/text
    columns are object arrays with None for missing. Column reads go through
    :meth:`column`, which records the name in :attr:`accessed` so tests can
    audit which columns a consumer touched.
    """

    def __init__(self, schema: list[ColumnSchema], columns: dict[str, np.ndarray],
                 parse_failures: int = 0):
        validate_schema(schema)
        self.schema = list(schema)
        self._by_name = {c.name: c for c in schema}
        if set(columns) != set(self._by_name):
            raise ValidationError("columns do not match schema names")
        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise ValidationError(f"ragged columns: lengths {sorted(lengths)}")
        self._columns = columns
        self.n_rows = lengths.pop() if lengths else 0
        self.parse_failures = parse_failures
        self.accessed: set[str] = set()

    # -- basics ---------------------------------------------------------
    def column_schema(self, name: str) -> ColumnSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise ValidationError(f"no such column: {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        sch = self.column_schema(name)
        self.accessed.add(sch.name)
        return self._columns[name]

    @property
    def key_name(self) -> str:
        return next(c.name for c in self.schema if c.role == "key")

    @property
    def metric_name(self) -> str:
        return next(c.name for c in self.schema if c.role == "target-metric")

    def keys(self) -> np.ndarray:
        return self._columns[self.key_name]

    def feature_columns(self) -> list[ColumnSchema]:
        return [c for c in self.schema if c.role == "feature"]

    def missing_mask(self, name: str) -> np.ndarray:
        col = self.column(name)
        if col.dtype == object:
            return np.array([v is None for v in col], dtype=bool)
        return np.isnan(col)

    def subset(self, indices: np.ndarray) -> "Table":
        cols = {n: v[indices] for n, v in self._columns.items()}
        return Table(self.schema, cols, parse_failures=self.parse_failures)

    def __len__(self) -> int:
        return self.n_rows


def _parse_cell(raw: str, dtype: str):
    """Returns (value, failed). Empty string is missing, never a failure."""
    if raw == "":
        return None, False
    if dtype == "numeric":
        try:
            return float(raw), False
        except ValueError:
            return None, True
    if dtype == "boolean":
        low = raw.strip().lower()
        if low in _TRUE_TOKENS:
            return 1.0, False
        if low in _FALSE_TOKENS:
            return 0.0, False
        return None, True
    return raw, False


def _column_array(values: list, dtype: str) -> np.ndarray:
    if dtype in ("numeric", "boolean"):
        return np.array([math.nan if v is None else v for v in values], dtype=np.float64)
    return np.array(values, dtype=object)


def load_csv(path: str, schema: list[ColumnSchema]) -> Table:
    """Read a CSV whose header matches the schema names (any column order).

    Cells that fail to parse become missing and are tallied in
    ``Table.parse_failures``. Duplicate keys are an error.
    """
    validate_schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        expected = {c.name for c in schema}
        got = set(header)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValidationError(
                f"{path}: header mismatch (missing {missing}, unexpected {extra})"
            )
        col_pos = {name: header.index(name) for name in expected}
        raw_cols: dict[str, list] = {c.name: [] for c in schema}
        failures = 0
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}:{row_num}: expected {len(header)} cells, got {len(row)}")
            for col in schema:
                raw = row[col_pos[col.name]]
                if col.role == "key":
                    if raw == "":
                        raise ValidationError(f"{path}:{row_num}: empty key")
                    raw_cols[col.name].append(raw)
                    continue
                value, failed = _parse_cell(raw, col.dtype)
                failures += failed
                raw_cols[col.name].append(value)

    key_name = next(c.name for c in schema if c.role == "key")
    keys = raw_cols[key_name]
    if len(set(keys)) != len(keys):
        seen: set = set()
        dupes = sorted({k for k in keys if (k in seen) or seen.add(k)})[:5]
        raise ValidationError(f"{path}: duplicate keys, e.g. {dupes}")

    columns = {
        c.name: np.array(raw_cols[c.name], dtype=object) if c.role == "key"
        else _column_array(raw_cols[c.name], c.dtype)
        for c in schema
    }
    return Table(schema, columns, parse_failures=failures)


def _format_cell(value, dtype: str) -> str:
    if dtype in ("numeric", "boolean"):
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return ""
        if dtype == "boolean":
            return "true" if value else "false"
        return repr(float(value))
    return "" if value is None else str(value)


def write_csv(table: Table, path: str) -> None:
    """Write in schema column order; floats use round-trip repr."""
    names = [c.name for c in table.schema]
    dtypes = ["text" if c.role == "key" else c.dtype for c in table.schema]
    cols = [table.column(n) for n in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(table.n_rows):
            writer.writerow([_format_cell(col[i], dt) for col, dt in zip(cols, dtypes)])


@dataclass
class PairedDataset:
    """Row-aligned view of the keys shared by a control and a test table.

    ``y_shift[i]`` is 1 when the target metric of matched pair i differs
    beyond tolerance; all aligned arrays are ordered by control row order.
    """

    control: Table
    test: Table
    control_idx: np.ndarray
    test_idx: np.ndarray
    matched_keys: list[str]
    y_shift: np.ndarray
    unmatched_control_keys: list[str]
    unmatched_test_keys: list[str]
    tolerance: float
    _test_matched: Table | None = field(default=None, repr=False)
    _control_matched: Table | None = field(default=None, repr=False)

    @property
    def n_matched(self) -> int:
        return len(self.matched_keys)

    @property
    def test_matched(self) -> Table:
        if self._test_matched is None:
            self._test_matched = self.test.subset(self.test_idx)
        return self._test_matched

    @property
    def control_matched(self) -> Table:
        if self._control_matched is None:
            self._control_matched = self.control.subset(self.control_idx)
        return self._control_matched


def pair_tables(control: Table, test: Table, tolerance: float = 1e-9) -> PairedDataset:
    """Match rows by key and derive the per-row shift surrogate label.

    A pair gets label 1 when |metric_test - metric_control| exceeds
    ``tolerance * max(1, |metric_control|)``, or when exactly one side's
    metric is missing. Keys present on only one side are reported, not
    matched.
    """
    if [c.name for c in control.schema] != [c.name for c in test.schema]:
        raise ValidationError("control and test schemas must declare the same columns")
    if not (tolerance >= 0 and math.isfinite(tolerance)):
        raise ValidationError(f"tolerance must be finite and >= 0, got {tolerance}")

    test_pos = {k: i for i, k in enumerate(test.keys())}
    control_idx, test_idx, matched_keys = [], [], []
    unmatched_control = []
    for i, k in enumerate(control.keys()):
        j = test_pos.get(k)
        if j is None:
            unmatched_control.append(k)
        else:
            control_idx.append(i)
            test_idx.append(j)
            matched_keys.append(k)
    matched_set = set(matched_keys)
    unmatched_test = [k for k in test.keys() if k not in matched_set]
    if not matched_keys:
        raise PairingError("no keys shared between control and test tables")

    control_idx = np.asarray(control_idx, dtype=np.int64)
    test_idx = np.asarray(test_idx, dtype=np.int64)
    m_control = control.column(control.metric_name)[control_idx]
    m_test = test.column(test.metric_name)[test_idx]
    nan_c = np.isnan(m_control)
    nan_t = np.isnan(m_test)
    with np.errstate(invalid="ignore"):
        differs = np.abs(m_test - m_control) > tolerance * np.maximum(1.0, np.abs(m_control))
    y = np.where(nan_c & nan_t, 0, np.where(nan_c ^ nan_t, 1, differs)).astype(np.uint8)

    return PairedDataset(
        control=control,
        test=test,
        control_idx=control_idx,
        test_idx=test_idx,
        matched_keys=matched_keys,
        y_shift=y,
        unmatched_control_keys=unmatched_control,
        unmatched_test_keys=unmatched_test,
        tolerance=tolerance,
    )
