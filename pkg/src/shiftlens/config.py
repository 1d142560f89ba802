"""Declarative run configuration: one JSON document drives a full run.

Every stage reads its parameters from here; artifacts are content-
addressed by a hash of the config (minus the output directory) plus the
package version, so stale intermediate files from an edited config are
rejected rather than silently reused.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .boosting import GBTConfig
from .errors import ConfigError
from .noise import NoiseRule
from .stats import AnonymityPolicy
from .tabular import ColumnSchema, validate_schema

__all__ = ["RunConfig", "load_config", "config_hash"]

DEFAULT_ALPHA_GRID = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]


@dataclass
class SegmentationSettings:
    alpha_grid: list[float] = field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))
    tau: float = 0.6
    max_depth: int = 5
    class_weights: dict[int, float] = field(default_factory=lambda: {0: 1.0, 1: 10.0})
    min_leaf_weight: float = 0.0
    weighted_leaf_corr: bool = False
    use_derived_features: bool = False  # stage-2 tree on base columns by default

    def __post_init__(self):
        if not self.alpha_grid or any(a <= 0 for a in self.alpha_grid):
            raise ConfigError("alpha_grid must be non-empty and positive")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must be in (0, 1]")
        if self.max_depth < 1:
            raise ConfigError("segmentation max_depth must be >= 1")
        cw = {int(k): float(v) for k, v in self.class_weights.items()}
        if set(cw) != {0, 1} or min(cw.values()) <= 0:
            raise ConfigError("class_weights must give classes 0 and 1 positive weights")
        self.class_weights = cw

    def to_dict(self) -> dict:
        return {
            "alpha_grid": list(self.alpha_grid),
            "tau": self.tau,
            "max_depth": self.max_depth,
            "class_weights": {str(k): v for k, v in self.class_weights.items()},
            "min_leaf_weight": self.min_leaf_weight,
            "weighted_leaf_corr": self.weighted_leaf_corr,
            "use_derived_features": self.use_derived_features,
        }


@dataclass
class ProviderSettings:
    kind: str = "mock"  # mock | http
    canned_path: str | None = None  # JSON map prompt-sha256 -> response text
    generate: bool = True
    max_retries: int = 3

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ConfigError("provider kind must be 'mock' or 'http'")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "canned_path": self.canned_path,
            "generate": self.generate,
            "max_retries": self.max_retries,
        }


@dataclass
class RunConfig:
    control_csv: str
    test_csv: str
    schema: list[ColumnSchema]
    output_dir: str
    seed: int = 0
    pair_tolerance: float = 1e-9
    n_bins: int = 10
    anonymity_min_slice: int | None = None  # None => adaptive from row count
    anonymity_k: int | None = None
    quasi_identifiers: list[str] = field(default_factory=list)
    noise_rules: list[NoiseRule] | None = None  # None => default rule set
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    model_c: GBTConfig = field(default_factory=GBTConfig)
    model_n: GBTConfig = field(default_factory=GBTConfig)
    segmentation: SegmentationSettings = field(default_factory=SegmentationSettings)
    baseline_q_threshold: float = 0.05
    baseline_max_slices: int = 10
    truth_csv: str | None = None
    max_onehot: int = 24

    def __post_init__(self):
        validate_schema(self.schema)
        if self.pair_tolerance < 0:
            raise ConfigError("pair_tolerance must be >= 0")
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2")
        if not 0.0 <= self.baseline_q_threshold <= 1.0:
            raise ConfigError("baseline_q_threshold must be in [0, 1]")
        if self.baseline_max_slices < 1:
            raise ConfigError("baseline_max_slices must be >= 1")
        if self.max_onehot < 1:
            raise ConfigError("max_onehot must be >= 1")
        names = {c.name for c in self.schema}
        unknown = [q for q in self.quasi_identifiers if q not in names]
        if unknown:
            raise ConfigError(f"quasi_identifiers not in schema: {unknown}")

    def anonymity_policy(self, n_rows: int) -> AnonymityPolicy:
        if self.anonymity_min_slice is None:
            base = AnonymityPolicy.adaptive(n_rows, self.quasi_identifiers)
            if self.anonymity_k is None:
                return base
            return AnonymityPolicy(base.min_slice_size, self.anonymity_k,
                                   tuple(self.quasi_identifiers))
        k = self.anonymity_k if self.anonymity_k is not None else max(2, self.anonymity_min_slice)
        return AnonymityPolicy(self.anonymity_min_slice, k, tuple(self.quasi_identifiers))

    def to_dict(self) -> dict:
        return {
            "control_csv": self.control_csv,
            "test_csv": self.test_csv,
            "schema": [{"name": c.name, "dtype": c.dtype, "role": c.role} for c in self.schema],
            "output_dir": self.output_dir,
            "seed": self.seed,
            "pair_tolerance": self.pair_tolerance,
            "n_bins": self.n_bins,
            "anonymity_min_slice": self.anonymity_min_slice,
            "anonymity_k": self.anonymity_k,
            "quasi_identifiers": list(self.quasi_identifiers),
            "noise_rules": None if self.noise_rules is None
            else [r.to_dict() for r in self.noise_rules],
            "provider": self.provider.to_dict(),
            "model_c": self.model_c.to_dict(),
            "model_n": self.model_n.to_dict(),
            "segmentation": self.segmentation.to_dict(),
            "baseline_q_threshold": self.baseline_q_threshold,
            "baseline_max_slices": self.baseline_max_slices,
            "truth_csv": self.truth_csv,
            "max_onehot": self.max_onehot,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            schema = [ColumnSchema(c["name"], c["dtype"], c.get("role", "feature"))
                      for c in d["schema"]]
            rules = d.get("noise_rules")
            gbt = {k: v for k, v in GBTConfig().to_dict().items()}
            return cls(
                control_csv=d["control_csv"],
                test_csv=d["test_csv"],
                schema=schema,
                output_dir=d["output_dir"],
                seed=int(d.get("seed", 0)),
                pair_tolerance=float(d.get("pair_tolerance", 1e-9)),
                n_bins=int(d.get("n_bins", 10)),
                anonymity_min_slice=d.get("anonymity_min_slice"),
                anonymity_k=d.get("anonymity_k"),
                quasi_identifiers=list(d.get("quasi_identifiers", [])),
                noise_rules=None if rules is None else [NoiseRule.from_dict(r) for r in rules],
                provider=ProviderSettings(**{**ProviderSettings().to_dict(),
                                             **d.get("provider", {})}),
                model_c=GBTConfig(**{**gbt, **d.get("model_c", {})}),
                model_n=GBTConfig(**{**gbt, **d.get("model_n", {})}),
                segmentation=SegmentationSettings(**{
                    **SegmentationSettings().to_dict(), **d.get("segmentation", {})
                }),
                baseline_q_threshold=float(d.get("baseline_q_threshold", 0.05)),
                baseline_max_slices=int(d.get("baseline_max_slices", 10)),
                truth_csv=d.get("truth_csv"),
                max_onehot=int(d.get("max_onehot", 24)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid run config: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return RunConfig.from_dict(data)


def config_hash(config: RunConfig) -> str:
    """Identity of a run for artifact addressing; the output directory
    itself does not participate (moving a run must not invalidate it).
    """
    doc = config.to_dict()
    doc.pop("output_dir", None)
    payload = json.dumps(doc, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
