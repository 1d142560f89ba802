"""Statistical pre-screen: slice effects, multiplicity control, anonymity.

All slice statistics are dependency-free by design: the chi-square p-value
for one degree of freedom is erfc(sqrt(stat/2)), i.e. the regularized upper
incomplete gamma function Q(1/2, stat/2).

Exported numeric bin boundaries are coarsened to 4 significant digits
(floor at the low end, ceil at the high end, so coverage is preserved).
Exact quantile edges are order statistics of the data and may reproduce a
raw cell value verbatim; coarsening keeps insight documents free of raw
values, which downstream prompt construction relies on.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tabular import ColumnSchema, Table

__all__ = [
    "ChiSquareResult",
    "AnonymityPolicy",
    "SliceSpec",
    "SliceInsight",
    "InsightSummary",
    "bin_numeric",
    "chi_square_test",
    "cramers_v",
    "point_biserial",
    "bh_fdr",
    "anonymity_check",
    "slice_mask",
    "build_insight_summary",
]


# -- significant-digit coarsening ---------------------------------------

def _d4(x: float) -> float:
    """Round to 4 significant digits via decimal formatting (half-even)."""
    if x == 0.0 or not math.isfinite(x):
        return x
    return float(f"{x:.4g}")


def _step4(x: float) -> float:
    exp = math.floor(math.log10(abs(x))) if x != 0.0 else 0
    return 10.0 ** (exp - 3)


def _floor4(x: float) -> float:
    r = _d4(x)
    if r <= x:
        return r
    return _d4(r - _step4(r))


def _ceil4(x: float) -> float:
    r = _d4(x)
    if r >= x:
        return r
    return _d4(r + _step4(r))


# -- binning --------------------------------------------------------------

def bin_numeric(values: np.ndarray, n_bins: int = 10) -> list[float]:
    """Quantile bin edges for a numeric column, coarsened to 4 sig. digits.

    Returns a strictly increasing edge list; bin j spans [e_j, e_{j+1}),
    the last bin is closed on the right. A constant column collapses to the
    single bin [v, v]. Missing values must be filtered by the caller.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ValidationError("bin_numeric: empty column")
    if np.isnan(vals).any():
        raise ValidationError("bin_numeric: missing values must be excluded")
    if n_bins < 1:
        raise ValidationError(f"bin_numeric: n_bins must be >= 1, got {n_bins}")
    raw = np.quantile(vals, np.linspace(0.0, 1.0, n_bins + 1))
    edges = [_floor4(float(raw[0]))]
    for e in raw[1:-1]:
        edges.append(_d4(float(e)))
    edges.append(_ceil4(float(raw[-1])))
    out: list[float] = []
    for e in edges:
        if not out or e > out[-1]:
            out.append(e)
    if len(out) == 1:
        return [out[0], out[0]]
    return out


# -- elementary statistics -------------------------------------------------

@dataclass(frozen=True)
class ChiSquareResult:
    stat: float
    p_value: float
    degenerate: bool


def chi_square_test(counts) -> ChiSquareResult:
    """Pearson chi-square on a 2x2 contingency table, no continuity correction.

    A zero marginal makes the statistic undefined; such tables return
    (stat=0, p=1) flagged degenerate.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.shape != (2, 2):
        raise ValidationError(f"chi_square_test: expected a 2x2 table, got shape {c.shape}")
    if (c < 0).any() or not np.isfinite(c).all():
        raise ValidationError("chi_square_test: counts must be finite and non-negative")
    a, b = c[0]
    d, e = c[1]
    n = a + b + d + e
    r0, r1 = a + b, d + e
    c0, c1 = a + d, b + e
    if min(r0, r1, c0, c1) == 0.0 or n == 0.0:
        return ChiSquareResult(0.0, 1.0, True)
    stat = n * (a * e - b * d) ** 2 / (r0 * r1 * c0 * c1)
    p = math.erfc(math.sqrt(stat / 2.0))
    return ChiSquareResult(float(stat), float(p), False)


def cramers_v(stat: float, n: int, n_rows: int = 2, n_cols: int = 2) -> float:
    """Effect size sqrt(stat / (n * min(r-1, c-1))), clamped to [0, 1]."""
    if n <= 0:
        raise ValidationError(f"cramers_v: n must be positive, got {n}")
    if min(n_rows, n_cols) < 2:
        raise ValidationError("cramers_v: table must have at least 2 rows and 2 columns")
    denom = n * min(n_rows - 1, n_cols - 1)
    v = math.sqrt(max(0.0, stat) / denom)
    return min(1.0, max(0.0, v))


def point_biserial(binary: np.ndarray, values: np.ndarray) -> tuple[float, bool]:
    """Correlation between a 0/1 group label and a numeric column.

    Uses the population standard deviation, so the value equals the Pearson
    correlation of the two arrays. Zero variance or a single group is
    degenerate: returns (0.0, True).
    """
    y = np.asarray(binary, dtype=np.float64)
    x = np.asarray(values, dtype=np.float64)
    if y.shape != x.shape or y.ndim != 1:
        raise ValidationError("point_biserial: inputs must be equal-length 1-D arrays")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValidationError("point_biserial: group labels must be 0/1")
    n = y.size
    n1 = int(y.sum())
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        return 0.0, True
    s = float(np.std(x))
    if s == 0.0 or not math.isfinite(s):
        return 0.0, True
    m1 = float(x[y == 1.0].mean())
    m0 = float(x[y == 0.0].mean())
    r = (m1 - m0) / s * math.sqrt(n1 * n0 / (n * n))
    return float(np.clip(r, -1.0, 1.0)), False


def bh_fdr(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values, returned in input order.

    q_(i) = min_{j >= i} p_(j) * m / j over the ascending p ordering,
    clamped to 1.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValidationError("bh_fdr: expected a 1-D array")
    if p.size == 0:
        return np.empty(0, dtype=np.float64)
    if ((p < 0) | (p > 1)).any() or not np.isfinite(p).all():
        raise ValidationError("bh_fdr: p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    q_sorted = np.minimum(q_sorted, 1.0)
    q = np.empty(m, dtype=np.float64)
    q[order] = q_sorted
    return q


# -- anonymity -------------------------------------------------------------

@dataclass(frozen=True)
class AnonymityPolicy:
    """Suppression policy for exported slices.

    A slice passes when it holds at least ``min_slice_size`` rows AND every
    quasi-identifier combination inside it appears at least ``k_threshold``
    times within the slice.
    """

    min_slice_size: int
    k_threshold: int
    quasi_identifiers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.min_slice_size < 1 or self.k_threshold < 1:
            raise ValidationError("anonymity thresholds must be >= 1")

    @classmethod
    def adaptive(cls, n_rows: int, quasi_identifiers=()) -> "AnonymityPolicy":
        """Scale thresholds with table size: floor of 2, 0.1% of rows."""
        if n_rows < 1:
            raise ValidationError("adaptive policy needs a positive row count")
        min_slice = max(2, math.ceil(0.001 * n_rows))
        return cls(
            min_slice_size=min_slice,
            k_threshold=max(2, min_slice),
            quasi_identifiers=tuple(quasi_identifiers),
        )


def _qi_token(value) -> object:
    if value is None:
        return "\x00missing"
    if isinstance(value, float) and math.isnan(value):
        return "\x00missing"
    return value


def anonymity_check(table: Table, mask: np.ndarray, policy: AnonymityPolicy) -> bool:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (table.n_rows,):
        raise ValidationError("anonymity_check: mask length must equal table rows")
    size = int(mask.sum())
    if size < policy.min_slice_size:
        return False
    if not policy.quasi_identifiers:
        return True
    cols = [table.column(name)[mask] for name in policy.quasi_identifiers]
    counts = Counter(tuple(_qi_token(col[i]) for col in cols) for i in range(size))
    return min(counts.values()) >= policy.k_threshold


# -- slices and insights ----------------------------------------------------

@dataclass(frozen=True)
class SliceSpec:
    """One single-condition slice: categorical equality or a numeric bin."""

    column: str
    kind: str  # "eq" | "bin"
    category: str | None = None
    lo: float | None = None
    hi: float | None = None
    closed_right: bool = False

    def describe(self) -> str:
        if self.kind == "eq":
            return f"{self.column} == {self.category!r}"
        hi_b = "]" if self.closed_right else ")"
        return f"{self.column} in [{self.lo!r}, {self.hi!r}{hi_b}"

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "kind": self.kind,
            "category": self.category,
            "lo": self.lo,
            "hi": self.hi,
            "closed_right": self.closed_right,
        }


def slice_mask(table: Table, spec: SliceSpec) -> np.ndarray:
    """Row membership for a slice; missing values never match."""
    sch = table.column_schema(spec.column)
    col = table.column(spec.column)
    if spec.kind == "eq":
        if sch.dtype == "boolean":
            want = 1.0 if spec.category == "true" else 0.0
            with np.errstate(invalid="ignore"):
                return np.nan_to_num(col, nan=-1.0) == want
        return np.array([v == spec.category for v in col], dtype=bool)
    if spec.kind == "bin":
        if sch.dtype != "numeric":
            raise ValidationError(f"bin slice on non-numeric column {spec.column!r}")
        with np.errstate(invalid="ignore"):
            if spec.lo == spec.hi:
                inside = col == spec.lo
            elif spec.closed_right:
                inside = (col >= spec.lo) & (col <= spec.hi)
            else:
                inside = (col >= spec.lo) & (col < spec.hi)
        return np.where(np.isnan(col), False, inside)
    raise ValidationError(f"unknown slice kind {spec.kind!r}")


@dataclass(frozen=True)
class SliceInsight:
    spec: SliceSpec
    n_in: int
    rate_in: float
    rate_out: float
    chi2: float
    p_value: float
    q_value: float
    cramers_v: float
    point_biserial: float | None
    degenerate: bool

    def to_dict(self) -> dict:
        d = self.spec.to_dict()
        d.update(
            n_in=self.n_in,
            rate_in=self.rate_in,
            rate_out=self.rate_out,
            chi2=self.chi2,
            p_value=self.p_value,
            q_value=self.q_value,
            cramers_v=self.cramers_v,
            point_biserial=self.point_biserial,
            degenerate=self.degenerate,
        )
        return d


@dataclass
class InsightSummary:
    """Aggregate-only description of where a binary target concentrates.

    This document is the only dataset-derived content that may reach a
    completion provider: category labels and coarsened bin edges, never
    raw cells or keys.
    """

    fingerprint: str
    target_name: str
    n_rows: int
    n_bins: int
    n_slices_enumerated: int
    n_suppressed: int
    schema_context: list[dict]
    insights: list[SliceInsight] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "target_name": self.target_name,
            "n_rows": self.n_rows,
            "n_bins": self.n_bins,
            "n_slices_enumerated": self.n_slices_enumerated,
            "n_suppressed": self.n_suppressed,
            "schema_context": self.schema_context,
            "insights": [i.to_dict() for i in self.insights],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _dataset_fingerprint(schema: list[ColumnSchema], n_rows: int, target_name: str,
                         target: np.ndarray) -> str:
    payload = json.dumps(
        {
            "schema": [(c.name, c.dtype, c.role) for c in schema],
            "n_rows": n_rows,
            "target": target_name,
            "target_positives": int(target.sum()),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _category_label(value, dtype: str) -> str:
    if dtype == "boolean":
        return "true" if value else "false"
    return str(value)


def enumerate_slices(table: Table, n_bins: int) -> list[SliceSpec]:
    """All single-condition slices over feature-role columns, in schema order."""
    specs: list[SliceSpec] = []
    for col in table.feature_columns():
        values = table.column(col.name)
        if col.dtype == "numeric":
            valid = values[~np.isnan(values)]
            if valid.size == 0:
                continue
            edges = bin_numeric(valid, n_bins)
            for j in range(len(edges) - 1):
                specs.append(
                    SliceSpec(
                        column=col.name,
                        kind="bin",
                        lo=edges[j],
                        hi=edges[j + 1],
                        closed_right=(j == len(edges) - 2),
                    )
                )
        elif col.dtype == "boolean":
            present = values[~np.isnan(values)]
            for v in (0.0, 1.0):
                if (present == v).any():
                    specs.append(SliceSpec(col.name, "eq", category=_category_label(v, "boolean")))
        else:
            cats = sorted({v for v in values if v is not None})
            for cat in cats:
                specs.append(SliceSpec(col.name, "eq", category=cat))
    return specs


def build_insight_summary(
    table: Table,
    target: np.ndarray,
    target_name: str,
    policy: AnonymityPolicy,
    n_bins: int = 10,
) -> InsightSummary:
    """Screen every slice against a 0/1 target and assemble the summary.

    Slices failing the anonymity policy are suppressed (counted, not
    exported). q-values come from one BH family pooled over all
    non-suppressed slices for this target. The result is ordered by
    ascending q, then descending Cramer's V, then enumeration order.
    """
    target = np.asarray(target)
    if target.shape != (table.n_rows,):
        raise ValidationError("target length must equal table rows")
    if not np.isin(target, (0, 1)).all():
        raise ValidationError("target must be binary 0/1")
    t = target.astype(np.float64)

    specs = enumerate_slices(table, n_bins)
    pb_cache: dict[str, float | None] = {}
    kept: list[tuple[SliceSpec, int, float, float, float, float, float, float | None, bool]] = []
    suppressed = 0
    for spec in specs:
        mask = slice_mask(table, spec)
        if not anonymity_check(table, mask, policy):
            suppressed += 1
            continue
        n_in = int(mask.sum())
        a = float((t[mask] == 1.0).sum())
        b = float(n_in - a)
        c = float((t[~mask] == 1.0).sum())
        d = float((table.n_rows - n_in) - c)
        res = chi_square_test([[a, b], [c, d]])
        v = cramers_v(res.stat, table.n_rows) if not res.degenerate else 0.0
        rate_in = a / n_in if n_in else 0.0
        n_out = table.n_rows - n_in
        rate_out = c / n_out if n_out else 0.0
        pb: float | None = None
        if table.column_schema(spec.column).dtype == "numeric":
            if spec.column not in pb_cache:
                col = table.column(spec.column)
                ok = ~np.isnan(col)
                r, deg = point_biserial(t[ok], col[ok]) if ok.any() else (0.0, True)
                pb_cache[spec.column] = None if deg else r
            pb = pb_cache[spec.column]
        kept.append((spec, n_in, rate_in, rate_out, res.stat, res.p_value, v, pb, res.degenerate))

    q = bh_fdr(np.array([k[5] for k in kept])) if kept else np.empty(0)
    insights = [
        SliceInsight(
            spec=k[0], n_in=k[1], rate_in=k[2], rate_out=k[3], chi2=k[4],
            p_value=k[5], q_value=float(q[i]), cramers_v=k[6],
            point_biserial=k[7], degenerate=k[8],
        )
        for i, k in enumerate(kept)
    ]
    insights.sort(key=lambda s: (s.q_value, -s.cramers_v))

    feature_cols = table.feature_columns()
    return InsightSummary(
        fingerprint=_dataset_fingerprint(table.schema, table.n_rows, target_name, target),
        target_name=target_name,
        n_rows=table.n_rows,
        n_bins=n_bins,
        n_slices_enumerated=len(specs),
        n_suppressed=suppressed,
        schema_context=[{"name": c.name, "dtype": c.dtype} for c in feature_cols],
        insights=insights,
    )
