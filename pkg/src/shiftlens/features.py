"""Turn tables and compiled expressions into numeric model matrices.

Numeric and boolean columns pass through as float64 with NaN for missing
(the tree learners route missing rows along a learned direction).
Categorical and text columns become one-hot indicator groups named
"COL=value"; text vocabularies are capped at the most frequent
``max_onehot`` values. Columns that showed missing values when the
encoder was fit get a companion "COL__missing" indicator so missingness
stays representable after one-hot encoding.

Derived expression columns are appended as numeric features with missing
results coerced to 0 plus an is-missing indicator wherever missing
propagation actually occurred.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dsl import DslExpression
from .errors import ValidationError
from .tabular import Table

__all__ = [
    "EncodedColumn",
    "FeatureEncoder",
    "evaluate_features",
    "build_model_matrix",
]

DEFAULT_MAX_ONEHOT = 24
MISSING_SUFFIX = "__missing"


@dataclass(frozen=True)
class EncodedColumn:
    name: str
    source: str
    kind: str  # "numeric" | "onehot" | "missing"
    category: str | None = None


class FeatureEncoder:
    """Fit a column vocabulary once, then produce aligned matrices."""

    def __init__(self, max_onehot: int = DEFAULT_MAX_ONEHOT):
        if max_onehot < 1:
            raise ValidationError("max_onehot must be >= 1")
        self.max_onehot = max_onehot
        self.columns: list[str] = []
        self.encoded: list[EncodedColumn] = []
        self._fitted = False

    @property
    def feature_names(self) -> list[str]:
        return [enc.name for enc in self.encoded]

    def fit(self, table: Table, columns: list[str] | None = None) -> "FeatureEncoder":
        if columns is None:
            columns = [c.name for c in table.feature_columns()]
        if not columns:
            raise ValidationError("no columns to encode")
        self.columns = list(columns)
        self.encoded = []
        for name in self.columns:
            schema = table.column_schema(name)
            values = table.column(name)
            if schema.dtype in ("numeric", "boolean"):
                self.encoded.append(EncodedColumn(name, name, "numeric"))
                continue
            counts = Counter(v for v in values if v is not None)
            cats = sorted(counts)
            if len(cats) > self.max_onehot:
                top = sorted(counts, key=lambda c: (-counts[c], c))[: self.max_onehot]
                cats = sorted(top)
            for cat in cats:
                self.encoded.append(EncodedColumn(f"{name}={cat}", name, "onehot", cat))
            if any(v is None for v in values):
                self.encoded.append(EncodedColumn(name + MISSING_SUFFIX, name, "missing"))
        self._fitted = True
        return self

    def transform(self, table: Table) -> np.ndarray:
        if not self._fitted:
            raise ValidationError("encoder is not fitted")
        n = table.n_rows
        out = np.empty((n, len(self.encoded)), dtype=np.float64, order="C")
        cache: dict[str, object] = {}
        for j, enc in enumerate(self.encoded):
            if enc.source not in cache:
                cache[enc.source] = table.column(enc.source)
            values = cache[enc.source]
            if enc.kind == "numeric":
                out[:, j] = values
            elif enc.kind == "onehot":
                out[:, j] = [1.0 if v == enc.category else 0.0 for v in values]
            else:
                out[:, j] = [1.0 if v is None else 0.0 for v in values]
        return out

    def fit_transform(self, table: Table, columns: list[str] | None = None) -> np.ndarray:
        return self.fit(table, columns).transform(table)


def evaluate_features(table: Table, exprs: dict[str, DslExpression]) -> tuple[np.ndarray, list[str]]:
    """Materialize derived columns: one numeric column per expression, plus
    a "<name>__missing" indicator for each expression whose evaluation hit
    missing inputs on at least one row.
    """
    names: list[str] = []
    cols: list[np.ndarray] = []
    for name, expr in exprs.items():
        values, miss = expr.evaluate(table)
        names.append(name)
        cols.append(values)
        if miss.any():
            names.append(name + MISSING_SUFFIX)
            cols.append(miss.astype(np.float64))
    if not cols:
        return np.empty((table.n_rows, 0), dtype=np.float64), []
    return np.ascontiguousarray(np.column_stack(cols)), names


def build_model_matrix(
    table: Table,
    encoder: FeatureEncoder,
    exprs: dict[str, DslExpression] | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Base encoded columns followed by derived expression columns."""
    base = encoder.transform(table)
    names = list(encoder.feature_names)
    if exprs:
        ext, ext_names = evaluate_features(table, exprs)
        clash = set(names) & set(ext_names)
        if clash:
            raise ValidationError(f"derived feature names collide with encoded columns: {sorted(clash)}")
        if ext.shape[1]:
            base = np.ascontiguousarray(np.hstack([base, ext]))
            names.extend(ext_names)
    return base, names
