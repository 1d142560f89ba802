"""Synthetic claims-style benchmark: base table, planted interventions,
injected noise, and row-level ground truth.

The generator produces a control table of encounter records, applies one
intervention preset (a DSL predicate picking the affected segment plus a
single-column mechanism), then corrupts the result with noise mechanisms
at configurable targeted rates. Ground truth carries, per row of the
final test table, whether the intervention touched it, whether noise
touched it, and which mechanisms did.

Intervention predicates and noise predicates in the shipped presets
reference disjoint column sets, so segment membership and noisiness are
independent by construction (overlapping rows still happen).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dsl import compile_predicate
from .errors import ValidationError
from .tabular import ColumnSchema, Table

__all__ = [
    "COLUMNS",
    "MEDICARE_TARGET_SHARE",
    "InterventionSpec",
    "NoiseSpec",
    "GroundTruth",
    "generate_base_table",
    "apply_intervention",
    "plan_noise",
    "inject_noise",
    "noise_specs_for",
    "build_schema",
    "BenchmarkData",
    "make_benchmark",
    "PRESETS",
    "NOISE_LEVELS",
]

INTERVENTION_MECHANISMS = ("multiply", "scale", "add_gaussian", "zero_with_prob")
NOISE_MECHANISMS = (
    "duplicate-row", "outlier-multiple", "missing-value",
    "suspicious-rounding", "zero-value", "text-anomaly",
)

MEDICARE_TARGET_SHARE = 0.30

_COUNTIES = [
    "Barnstable", "Berkshire", "Bristol", "Essex", "Franklin",
    "Hampden", "Middlesex", "Norfolk", "Suffolk", "Worcester",
]
_COUNTY_P = [0.04, 0.05, 0.08, 0.10, 0.04, 0.07, 0.22, 0.12, 0.16, 0.12]

_PAYERS_NON_MEDICARE = ["Aetna", "Cigna", "Humana", "Medicaid", "NO_INSURANCE", "UnitedHealthcare"]
_PAYER_P = [0.20, 0.14, 0.13, 0.22, 0.11, 0.20]

_ENCOUNTER_CLASSES = ["ambulatory", "outpatient", "wellness", "inpatient", "emergency", "urgentcare", "home"]
_ENCOUNTER_P = [0.28, 0.20, 0.15, 0.12, 0.12, 0.08, 0.05]
_ENCOUNTER_BUMP = {
    "ambulatory": 120.0, "outpatient": 260.0, "wellness": 40.0, "inpatient": 5200.0,
    "emergency": 1500.0, "urgentcare": 380.0, "home": 90.0,
}

_REASONS = [
    "Acute bronchitis", "Chronic kidney disease", "Diabetes mellitus type 2",
    "Essential hypertension", "Fracture of bone", "Hyperlipidemia",
    "Major depressive disorder", "Normal pregnancy", "Osteoarthritis",
    "Otitis media", "Pneumonia", "Viral sinusitis",
]
_REASON_P = [0.09, 0.06, 0.12, 0.14, 0.05, 0.11, 0.07, 0.06, 0.08, 0.07, 0.05, 0.10]

COLUMNS = [
    "RECORD_ID", "AGE", "GENDER", "MARITAL", "COUNTY", "PAYER_NAME",
    "ENCOUNTERCLASS", "REASONDESCRIPTION", "TOT_INCOME", "TOTSLFY",
    "BASE_COST", "PAYER_COVERAGE", "TOTAL_CLAIM_COST",
]


def build_schema(metric: str = "TOTAL_CLAIM_COST") -> list[ColumnSchema]:
    """Schema for the generated table with one column promoted to target metric."""
    numeric = {"AGE", "TOT_INCOME", "TOTSLFY", "BASE_COST", "PAYER_COVERAGE", "TOTAL_CLAIM_COST"}
    if metric not in numeric:
        raise ValidationError(f"metric must be one of the numeric columns, got {metric!r}")
    out = []
    for name in COLUMNS:
        if name == "RECORD_ID":
            out.append(ColumnSchema(name, "text", "key"))
        elif name == metric:
            out.append(ColumnSchema(name, "numeric", "target-metric"))
        elif name in numeric:
            out.append(ColumnSchema(name, "numeric", "feature"))
        elif name == "REASONDESCRIPTION":
            out.append(ColumnSchema(name, "text", "feature"))
        else:
            out.append(ColumnSchema(name, "categorical", "feature"))
    return out


def _money(x: np.ndarray) -> np.ndarray:
    return np.round(x, 2)


def generate_base_table(n_rows: int, seed: int, metric: str = "TOTAL_CLAIM_COST") -> Table:
    """Deterministic synthetic encounter records.

    Payer assignment is age-dependent so the Medicare share lands near
    MEDICARE_TARGET_SHARE while still correlating with AGE the way real
    claims do.
    """
    if n_rows < 100:
        raise ValidationError("benchmark tables need at least 100 rows")
    rng = np.random.default_rng(seed)

    age = rng.integers(18, 91, size=n_rows).astype(np.float64)
    gender = rng.choice(["F", "M"], size=n_rows, p=[0.52, 0.48])
    marital = rng.choice(["Married", "Single", "Divorced", "Widowed"],
                         size=n_rows, p=[0.45, 0.30, 0.15, 0.10])
    county = rng.choice(_COUNTIES, size=n_rows, p=_COUNTY_P)
    encounter = rng.choice(_ENCOUNTER_CLASSES, size=n_rows, p=_ENCOUNTER_P)
    reason = rng.choice(_REASONS, size=n_rows, p=_REASON_P)

    p_medicare = np.where(age >= 65.0, 0.75, 0.05)
    is_medicare = rng.random(n_rows) < p_medicare
    other = rng.choice(_PAYERS_NON_MEDICARE, size=n_rows, p=_PAYER_P)
    payer = np.where(is_medicare, "Medicare", other)

    tot_income = _money(rng.lognormal(math.log(114000.0), 0.70, n_rows))
    totslfy = _money(rng.lognormal(math.log(48000.0), 1.20, n_rows))
    base_cost = _money(rng.lognormal(math.log(125.0), 0.60, n_rows))
    bump = np.array([_ENCOUNTER_BUMP[c] for c in encounter])
    total_claim = _money(base_cost * rng.uniform(2.0, 9.0, n_rows) + bump)
    coverage = _money(total_claim * rng.uniform(0.30, 0.95, n_rows))
    coverage[payer == "NO_INSURANCE"] = 0.0

    cols = {
        "RECORD_ID": np.array([f"R{i:07d}" for i in range(n_rows)], dtype=object),
        "AGE": age,
        "GENDER": gender.astype(object),
        "MARITAL": marital.astype(object),
        "COUNTY": county.astype(object),
        "PAYER_NAME": payer.astype(object),
        "ENCOUNTERCLASS": encounter.astype(object),
        "REASONDESCRIPTION": reason.astype(object),
        "TOT_INCOME": tot_income,
        "TOTSLFY": totslfy,
        "BASE_COST": base_cost,
        "PAYER_COVERAGE": coverage,
        "TOTAL_CLAIM_COST": total_claim,
    }
    return Table(build_schema(metric), cols)


def _clone_columns(table: Table) -> dict[str, np.ndarray]:
    return {c.name: table.column(c.name).copy() for c in table.schema}


def _predicate_types(table: Table) -> dict[str, str]:
    return {
        c.name: c.dtype for c in table.schema
        if c.role in ("feature", "target-metric", "quasi-identifier")
    }


@dataclass(frozen=True)
class InterventionSpec:
    name: str
    predicate: str  # DSL over control-row values
    mechanism: str
    column: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in INTERVENTION_MECHANISMS:
            raise ValidationError(f"unknown intervention mechanism {self.mechanism!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name, "predicate": self.predicate, "mechanism": self.mechanism,
            "column": self.column, "params": dict(self.params), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InterventionSpec":
        return cls(d["name"], d["predicate"], d["mechanism"], d["column"],
                   dict(d.get("params", {})), int(d.get("seed", 0)))


def apply_intervention(control: Table, spec: InterventionSpec,
                       noise_flags: np.ndarray | None = None) -> tuple[Table, np.ndarray]:
    """Clone the control table and modify the rows the predicate selects.

    Returns (test table, per-row intervention flag). Deterministic
    mechanisms flag every matching row even when the new value equals the
    old one; zero_with_prob flags exactly the rows whose coin fired, with
    the noisy-row probability used where noise_flags is 1.
    """
    sch = control.column_schema(spec.column)
    if sch.dtype != "numeric":
        raise ValidationError(f"intervention column {spec.column!r} must be numeric")
    mask = compile_predicate(spec.predicate, _predicate_types(control)).predicate_mask(control)
    cols = _clone_columns(control)
    flags = np.zeros(control.n_rows, dtype=np.uint8)
    rng = np.random.default_rng(spec.seed)
    values = cols[spec.column]

    if spec.mechanism in ("multiply", "scale"):
        factor = float(spec.params["factor"])
        values[mask] = _money(values[mask] * factor)
        flags[mask] = 1
    elif spec.mechanism == "add_gaussian":
        sigma = float(spec.params["sigma"])
        values[mask] = _money(values[mask] + rng.normal(0.0, sigma, int(mask.sum())))
        flags[mask] = 1
    else:  # zero_with_prob
        p_clean = float(spec.params["p_clean"])
        p_noisy = float(spec.params["p_noisy"])
        if noise_flags is None:
            p = np.full(control.n_rows, p_clean)
        else:
            p = np.where(np.asarray(noise_flags) == 1, p_noisy, p_clean)
        fire = mask & (rng.random(control.n_rows) < p)
        values[fire] = 0.0
        flags[fire] = 1

    return Table(control.schema, cols), flags


@dataclass(frozen=True)
class NoiseSpec:
    name: str
    mechanism: str
    rate_range: tuple[float, float]
    predicate: str  # DSL eligibility filter, columns disjoint from the intervention's
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in NOISE_MECHANISMS:
            raise ValidationError(f"unknown noise mechanism {self.mechanism!r}")
        lo, hi = self.rate_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValidationError(f"rate_range must satisfy 0 <= lo <= hi <= 1, got {self.rate_range}")

    def to_dict(self) -> dict:
        return {
            "name": self.name, "mechanism": self.mechanism,
            "rate_range": list(self.rate_range), "predicate": self.predicate,
            "params": dict(self.params), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(d["name"], d["mechanism"], tuple(d["rate_range"]), d["predicate"],
                   dict(d.get("params", {})), int(d.get("seed", 0)))


def _noise_column(spec: NoiseSpec) -> str:
    col = spec.params.get("column")
    if not col:
        raise ValidationError(f"noise spec {spec.name!r} requires params['column']")
    return col


def _changeable(values: np.ndarray, missing: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Rows where applying the mechanism would actually alter the cell."""
    mech = spec.mechanism
    if mech == "duplicate-row":
        return np.ones(len(values), dtype=bool)
    if mech == "outlier-multiple":
        return np.where(missing, False, values > 0)
    if mech in ("missing-value", "text-anomaly"):
        return ~missing
    if mech == "zero-value":
        return np.where(missing, False, values != 0.0)
    # suspicious-rounding
    gran = float(spec.params.get("granularity", 100.0))
    with np.errstate(invalid="ignore"):
        rounded = np.round(values / gran) * gran
    return np.where(missing, False, rounded != values)


def _eligible(table: Table, spec: NoiseSpec) -> np.ndarray:
    mask = compile_predicate(spec.predicate, _predicate_types(table)).predicate_mask(table)
    if spec.mechanism == "duplicate-row":
        return mask
    col = _noise_column(spec)
    return mask & _changeable(table.column(col), table.missing_mask(col), spec)


def plan_noise(table: Table, specs: list[NoiseSpec]) -> dict[str, np.ndarray]:
    """Pick, per spec, the row indices noise will target: a uniformly
    sampled rate from rate_range applied to the eligible-row count,
    sampled without replacement. Selection is decided here, before any
    intervention, mirroring the benchmark protocol where noisiness is
    assigned independently of the planted segment.
    """
    plan: dict[str, np.ndarray] = {}
    seen = set()
    for spec in specs:
        if spec.name in seen:
            raise ValidationError(f"duplicate noise spec name {spec.name!r}")
        seen.add(spec.name)
        rng = np.random.default_rng([spec.seed, 0])
        eligible = np.flatnonzero(_eligible(table, spec))
        rate = rng.uniform(*spec.rate_range)
        count = min(int(round(rate * len(eligible))), len(eligible))
        if count == 0:
            plan[spec.name] = np.empty(0, dtype=np.int64)
            continue
        plan[spec.name] = np.sort(rng.choice(eligible, size=count, replace=False))
    return plan


@dataclass
class GroundTruth:
    """Row-aligned truth for the final (noisy) test table."""

    keys: list[str]
    intervention: np.ndarray  # uint8
    noise: np.ndarray  # uint8
    mechanisms: list[list[str]]

    def noise_keys(self) -> set:
        return {self.keys[i] for i in range(len(self.keys)) if self.noise[i]}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "intervention_flag", "noise_flag", "mechanisms"])
            for i, key in enumerate(self.keys):
                w.writerow([key, int(self.intervention[i]), int(self.noise[i]),
                            ";".join(self.mechanisms[i])])

    @classmethod
    def read_csv(cls, path) -> "GroundTruth":
        keys, inter, noise, mechs = [], [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"key", "intervention_flag", "noise_flag", "mechanisms"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise ValidationError(f"ground-truth CSV must have columns {sorted(required)}")
            for row in reader:
                keys.append(row["key"])
                inter.append(int(row["intervention_flag"]))
                noise.append(int(row["noise_flag"]))
                mechs.append(row["mechanisms"].split(";") if row["mechanisms"] else [])
        return cls(keys, np.array(inter, dtype=np.uint8), np.array(noise, dtype=np.uint8), mechs)


def inject_noise(test: Table, specs: list[NoiseSpec],
                 plan: dict[str, np.ndarray] | None = None) -> tuple[Table, np.ndarray, list[list[str]]]:
    """Corrupt the test table: value mechanisms first, then duplicate
    appends with fresh synthetic keys, so copies reflect all value noise.

    A caller-supplied plan (row selection per spec, typically made on the
    pre-intervention table) is re-filtered to rows the mechanism can
    still change, keeping noise flags equal to the cells-that-differ
    diff. Returns (noisy table, noise flags, per-row mechanism lists)
    aligned to the noisy table rows. Appended copies are flagged as
    duplicate-row noise; their source rows are not.
    """
    n = test.n_rows
    if plan is None:
        plan = plan_noise(test, specs)
    cols = _clone_columns(test)
    flags = np.zeros(n, dtype=np.uint8)
    mechs: list[set] = [set() for _ in range(n)]
    dup_sources: list[int] = []

    for spec in specs:
        chosen = plan[spec.name]
        if len(chosen) == 0:
            continue
        if spec.mechanism == "duplicate-row":
            dup_sources.extend(int(i) for i in chosen)
            continue
        col = _noise_column(spec)
        values = cols[col]
        missing = np.array([v is None for v in values], dtype=bool) if values.dtype == object \
            else np.isnan(values)
        chosen = chosen[_changeable(values, missing, spec)[chosen]]
        if len(chosen) == 0:
            continue
        rng = np.random.default_rng([spec.seed, 1])
        if spec.mechanism == "outlier-multiple":
            lo, hi = spec.params.get("factor_range", (3.0, 5.0))
            factors = rng.uniform(float(lo), float(hi), len(chosen))
            values[chosen] = _money(values[chosen] * factors)
        elif spec.mechanism == "missing-value":
            values[chosen] = None if values.dtype == object else np.nan
        elif spec.mechanism == "zero-value":
            values[chosen] = 0.0
        elif spec.mechanism == "suspicious-rounding":
            gran = float(spec.params.get("granularity", 100.0))
            values[chosen] = np.round(values[chosen] / gran) * gran
        else:  # text-anomaly
            for i in chosen:
                values[i] = "ZZ_" + str(values[i])
        flags[chosen] = 1
        for i in chosen:
            mechs[int(i)].add(spec.mechanism)

    if dup_sources:
        src = np.array(sorted(dup_sources), dtype=np.int64)
        key_name = test.key_name
        for name in cols:
            extra = cols[name][src].copy()
            if name == key_name:
                extra = np.array([f"D{j:07d}" for j in range(len(src))], dtype=object)
            cols[name] = np.concatenate([cols[name], extra])
        flags = np.concatenate([flags, np.ones(len(src), dtype=np.uint8)])
        mechs.extend({"duplicate-row"} for _ in src)

    noisy = Table(test.schema, cols)
    return noisy, flags, [sorted(m) for m in mechs]


# -- presets -------------------------------------------------------------------

_T2_COUNTIES = "{'Barnstable', 'Bristol', 'Essex', 'Hampden', 'Norfolk', 'Suffolk'}"

_PRESET_TABLE = {
    "t1": {
        "metric": "TOTAL_CLAIM_COST",
        "intervention": dict(
            name="t1_claim_uplift",
            predicate="TOT_INCOME >= 150000 and AGE > 59 and TOTSLFY >= 100000 "
                      "and PAYER_NAME == 'Medicare'",
            mechanism="multiply", column="TOTAL_CLAIM_COST", params={"factor": 1.2},
        ),
        "noise_columns": "encounter",
    },
    "t2": {
        "metric": "PAYER_COVERAGE",
        "intervention": dict(
            name="t2_coverage_cut",
            predicate="GENDER == 'M' and COUNTY in " + _T2_COUNTIES +
                      " and ENCOUNTERCLASS in {'ambulatory', 'wellness', 'home'}",
            mechanism="scale", column="PAYER_COVERAGE", params={"factor": 0.7},
        ),
        "noise_columns": "reason",
    },
    "t3": {
        "metric": "BASE_COST",
        "intervention": dict(
            name="t3_base_cost_shift",
            predicate="MARITAL == 'Divorced' and GENDER == 'M' and AGE > 40",
            mechanism="add_gaussian", column="BASE_COST", params={"sigma": 30.0},
        ),
        "noise_columns": "encounter",
    },
    "meps": {
        "metric": "TOTSLFY",
        "intervention": dict(
            name="meps_selfpay_waiver",
            predicate="AGE < 65 and TOT_INCOME < 40000",
            mechanism="zero_with_prob", column="TOTSLFY",
            params={"p_clean": 0.9, "p_noisy": 0.3},
        ),
        "noise_columns": "encounter",
    },
}

PRESETS = tuple(sorted(_PRESET_TABLE))
NOISE_LEVELS = ("n0", "n1", "n2")

# targeting predicates per mechanism, on columns no preset intervention uses
_NOISE_PREDICATES = {
    "encounter": {
        "duplicate-row": "ENCOUNTERCLASS == 'inpatient'",
        "outlier-multiple": "ENCOUNTERCLASS in {'emergency', 'urgentcare'}",
        "missing-value": "ENCOUNTERCLASS in {'outpatient', 'home'}",
        "zero-value": "ENCOUNTERCLASS == 'wellness'",
    },
    "reason": {
        "duplicate-row": "REASONDESCRIPTION in {'Acute bronchitis', 'Pneumonia', 'Viral sinusitis'}",
        "outlier-multiple": "REASONDESCRIPTION in {'Essential hypertension', 'Hyperlipidemia'}",
        "missing-value": "REASONDESCRIPTION in {'Diabetes mellitus type 2', 'Osteoarthritis'}",
        "zero-value": "REASONDESCRIPTION in {'Normal pregnancy', 'Otitis media'}",
    },
}


def noise_specs_for(preset: str, level: str, seed: int) -> list[NoiseSpec]:
    """Shipped noise plans: the lighter level injects duplicates and
    outliers at 5-10% of eligible rows; the heavier one adds new-missing
    and zeroed values at 10-15% per mechanism.
    """
    if preset not in _PRESET_TABLE:
        raise ValidationError(f"unknown preset {preset!r}")
    if level not in NOISE_LEVELS:
        raise ValidationError(f"unknown noise level {level!r}")
    if level == "n0":
        return []
    info = _PRESET_TABLE[preset]
    preds = _NOISE_PREDICATES[info["noise_columns"]]
    rate = (0.05, 0.10) if level == "n1" else (0.10, 0.15)
    metric = info["metric"]
    specs = [
        NoiseSpec("dup_rows", "duplicate-row", rate, preds["duplicate-row"], {}, seed + 11),
        NoiseSpec("metric_outliers", "outlier-multiple", rate, preds["outlier-multiple"],
                  {"column": metric, "factor_range": (3.0, 5.0)}, seed + 12),
    ]
    if level == "n2":
        specs.append(NoiseSpec("coverage_missing", "missing-value", rate, preds["missing-value"],
                               {"column": "PAYER_COVERAGE"}, seed + 13))
        specs.append(NoiseSpec("zeroed_base_cost", "zero-value", rate, preds["zero-value"],
                               {"column": "BASE_COST"}, seed + 14))
    return specs


@dataclass
class BenchmarkData:
    preset: str
    noise_level: str
    control: Table
    test: Table
    truth: GroundTruth
    intervention: InterventionSpec
    noise_specs: list[NoiseSpec]

    @property
    def planted_fraction(self) -> float:
        return float(self.truth.intervention.sum()) / self.control.n_rows


def make_benchmark(preset: str = "t1", noise_level: str = "n0",
                   n_rows: int = 10000, seed: int = 0) -> BenchmarkData:
    """Generate one (control, noisy test, ground truth) instance.

    Noise row selection is planned before the intervention runs so
    zero_with_prob presets can use their per-noise-status probabilities;
    selection predicates only touch columns interventions never modify,
    so the plan equals what selecting on the post-intervention table
    would produce.
    """
    if preset not in _PRESET_TABLE:
        raise ValidationError(f"unknown preset {preset!r}")
    info = _PRESET_TABLE[preset]
    control = generate_base_table(n_rows, seed, metric=info["metric"])
    ispec = InterventionSpec.from_dict({**info["intervention"], "seed": seed + 1})
    nspecs = noise_specs_for(preset, noise_level, seed)

    plan = plan_noise(control, nspecs)
    pre_flags = np.zeros(n_rows, dtype=np.uint8)
    for chosen in plan.values():
        pre_flags[chosen] = 1

    test, int_flags = apply_intervention(control, ispec, noise_flags=pre_flags)
    noisy, noise_flags, mech_lists = inject_noise(test, nspecs, plan=plan)

    n_final = noisy.n_rows
    intervention = np.zeros(n_final, dtype=np.uint8)
    intervention[: len(int_flags)] = int_flags  # appended copies are noise, not segment members
    truth = GroundTruth(
        keys=[str(k) for k in noisy.keys()],
        intervention=intervention,
        noise=noise_flags,
        mechanisms=mech_lists,
    )
    return BenchmarkData(preset, noise_level, control, noisy, truth, ispec, nspecs)
