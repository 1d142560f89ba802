"""Rule-based noise labeling of the test table against a baseline.

Six mechanisms cover the data-quality corruptions the pipeline is meant
to discount: duplicated rows, implausible multiples of the paired
baseline value, new missing values, suspicious round numbers, zeroed
values, and out-of-vocabulary categories. Labels are inferred purely
from the two tables; ground-truth columns are never read (the table
access audit in tests enforces this). A rule may carry an optional DSL
scope predicate restricting which rows it can flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dsl import compile_predicate
from .errors import ConfigError, ValidationError
from .tabular import Table

__all__ = [
    "MECHANISMS",
    "NoiseRule",
    "NoiseLabels",
    "apply_rules",
    "default_rules",
]

MECHANISMS = (
    "duplicate-row",
    "outlier-multiple",
    "missing-value",
    "suspicious-rounding",
    "zero-value",
    "text-anomaly",
)

# roles whose columns a rule may read
_READABLE_ROLES = ("feature", "target-metric", "quasi-identifier", "key")


@dataclass(frozen=True)
class NoiseRule:
    name: str
    mechanism: str
    params: dict = field(default_factory=dict)
    scope: str | None = None  # DSL predicate over the test row

    def __post_init__(self):
        if not self.name:
            raise ConfigError("noise rule needs a name")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown noise mechanism {self.mechanism!r}")

    def to_dict(self) -> dict:
        d = {"name": self.name, "mechanism": self.mechanism, "params": dict(self.params)}
        if self.scope:
            d["scope"] = self.scope
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseRule":
        return cls(d["name"], d["mechanism"], dict(d.get("params", {})), d.get("scope"))


@dataclass
class NoiseLabels:
    labels: np.ndarray  # uint8, 1 = inferred noisy
    triggers: list[list[str]]  # rule names per row; label 1 iff non-empty

    @property
    def n_flagged(self) -> int:
        return int(self.labels.sum())

    def rows_for_csv(self, keys: list[str]) -> list[tuple[str, str, str]]:
        return [
            (keys[i], str(int(self.labels[i])), ";".join(self.triggers[i]))
            for i in range(len(keys))
        ]


def _is_multiple(value: float, granularity: float) -> bool:
    if granularity <= 0 or not math.isfinite(value):
        return False
    q = value / granularity
    return abs(q - round(q)) <= 1e-9 * max(1.0, abs(q))


def _rule_column(test: Table, rule: NoiseRule, dtypes: tuple[str, ...]) -> str:
    name = rule.params.get("column")
    if not name:
        raise ConfigError(f"rule {rule.name!r} requires params['column']")
    schema = test.column_schema(name)
    if schema.role not in _READABLE_ROLES:
        raise ValidationError(f"rule {rule.name!r} may not read {schema.role} column {name!r}")
    if schema.dtype not in dtypes:
        raise ConfigError(
            f"rule {rule.name!r} needs a {'/'.join(dtypes)} column, {name!r} is {schema.dtype}"
        )
    return name


def _comparable_columns(table: Table) -> list[str]:
    return [
        c.name for c in table.schema
        if c.role in ("feature", "target-metric", "quasi-identifier")
    ]


def _cell_token(value):
    if value is None:
        return None
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def apply_rules(test: Table, rules: list[NoiseRule], baseline: Table) -> NoiseLabels:
    """Evaluate every rule on every test row; a row's label is 1 iff at
    least one rule fires. Pairing is by key; unpaired rows fall back to
    the documented per-mechanism behavior.
    """
    n = test.n_rows
    test_keys = test.keys()
    base_index = {k: i for i, k in enumerate(baseline.keys())}
    pair = [base_index.get(k) for k in test_keys]

    hits: list[set] = [set() for _ in range(n)]

    scope_types = {
        c.name: c.dtype for c in test.schema if c.role in _READABLE_ROLES and c.role != "key"
    }
    for rule in rules:
        scope_mask = None
        if rule.scope:
            scope_mask = compile_predicate(rule.scope, scope_types).predicate_mask(test)

        fired = _apply_one(test, baseline, pair, rule)
        if scope_mask is not None:
            fired &= scope_mask
        for i in np.flatnonzero(fired):
            hits[i].add(rule.name)

    labels = np.fromiter((1 if h else 0 for h in hits), dtype=np.uint8, count=n)
    return NoiseLabels(labels=labels, triggers=[sorted(h) for h in hits])


def _apply_one(test: Table, baseline: Table, pair: list, rule: NoiseRule) -> np.ndarray:
    n = test.n_rows
    fired = np.zeros(n, dtype=bool)
    mech = rule.mechanism

    if mech == "duplicate-row":
        cols = rule.params.get("columns") or _comparable_columns(test)
        arrays = [test.column(c) for c in cols]
        tuples = [tuple(_cell_token(arr[i]) for arr in arrays) for i in range(n)]
        counts: dict = {}
        for t in tuples:
            counts[t] = counts.get(t, 0) + 1
        for i in range(n):
            if counts[tuples[i]] > 1 or pair[i] is None:
                fired[i] = True
        return fired

    if mech == "outlier-multiple":
        col = _rule_column(test, rule, ("numeric",))
        threshold = float(rule.params.get("threshold", 3.0))
        if threshold <= 1.0:
            raise ConfigError(f"rule {rule.name!r}: outlier threshold must exceed 1")
        tv = test.column(col)
        bv = baseline.column(col)
        finite = bv[np.isfinite(bv)]
        fallback = float(np.median(finite)) if finite.size else math.nan
        for i in range(n):
            v = tv[i]
            if not math.isfinite(v):
                continue
            ref = bv[pair[i]] if pair[i] is not None else fallback
            if math.isfinite(ref) and ref > 0 and v > threshold * ref:
                fired[i] = True
        return fired

    if mech == "missing-value":
        cols = rule.params.get("columns")
        if not cols:
            raise ConfigError(f"rule {rule.name!r} requires params['columns']")
        for col in cols:
            schema = test.column_schema(col)
            if schema.role not in _READABLE_ROLES:
                raise ValidationError(f"rule {rule.name!r} may not read {schema.role} column {col!r}")
            t_miss = test.missing_mask(col)
            b_miss = baseline.missing_mask(col)
            for i in range(n):
                if not t_miss[i]:
                    continue
                if pair[i] is None or not b_miss[pair[i]]:
                    fired[i] = True
        return fired

    if mech == "suspicious-rounding":
        col = _rule_column(test, rule, ("numeric",))
        gran = float(rule.params.get("granularity", 0))
        if gran <= 0:
            raise ConfigError(f"rule {rule.name!r} requires positive params['granularity']")
        tv = test.column(col)
        bv = baseline.column(col)
        for i in range(n):
            v = tv[i]
            if not (math.isfinite(v) and _is_multiple(v, gran)):
                continue
            j = pair[i]
            if j is None or not (math.isfinite(bv[j]) and _is_multiple(bv[j], gran)):
                fired[i] = True
        return fired

    if mech == "zero-value":
        col = _rule_column(test, rule, ("numeric",))
        tv = test.column(col)
        bv = baseline.column(col)
        for i in range(n):
            if tv[i] != 0.0:
                continue
            j = pair[i]
            if j is None or (math.isfinite(bv[j]) and bv[j] != 0.0):
                fired[i] = True
        return fired

    # text-anomaly
    col = _rule_column(test, rule, ("categorical", "text"))
    whitelist = rule.params.get("whitelist")
    if whitelist is None:
        allowed = {v for v in baseline.column(col) if v is not None}
    else:
        allowed = set(whitelist)
    tv = test.column(col)
    for i in range(n):
        if tv[i] is not None and tv[i] not in allowed:
            fired[i] = True
    return fired


def default_rules(test: Table) -> list[NoiseRule]:
    """One rule per mechanism, sized to the table's schema: duplicates
    over all comparable columns, value rules on the target metric plus
    numeric features, category checks on every categorical/text feature.
    """
    metric = test.metric_name
    numeric_cols = [
        c.name for c in test.schema
        if c.dtype == "numeric" and c.role in ("feature", "target-metric")
    ]
    cat_cols = [
        c.name for c in test.schema
        if c.dtype in ("categorical", "text") and c.role == "feature"
    ]
    rules = [
        NoiseRule("duplicate_rows", "duplicate-row"),
        NoiseRule("metric_outlier", "outlier-multiple", {"column": metric, "threshold": 3.0}),
        NoiseRule("new_missing_values", "missing-value", {"columns": numeric_cols}),
        NoiseRule("rounded_metric", "suspicious-rounding", {"column": metric, "granularity": 100.0}),
    ]
    for col in numeric_cols:
        rules.append(NoiseRule(f"zeroed_{col.lower()}", "zero-value", {"column": col}))
    for col in cat_cols:
        rules.append(NoiseRule(f"unknown_{col.lower()}", "text-anomaly", {"column": col}))
    return rules
