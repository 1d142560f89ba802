"""shiftlens: attribute a metric shift between paired tables to a
population segment while discounting rows that look like data noise.

The pipeline pairs control/test snapshots by key, derives a per-row
shift indicator and rule-based noise labels, trains twin gradient-
boosted classifiers for shift membership and noisiness, sweeps a
noise-penalty weight over shallow decision trees scored on a
signal-mass / noise-decoupling plane, picks the knee, and reads the
segment off the chosen tree's class-1 leaves.
"""

__version__ = "0.1.0"

from .boosting import GBTConfig, GBTModel, train_gbt
from .config import RunConfig, config_hash, load_config
from .errors import (
    ConfigError,
    DslError,
    PairingError,
    ProviderError,
    ShiftLensError,
    StageError,
    StaleArtifactError,
    SynthesisError,
    ValidationError,
)
from .benchgen import BenchmarkData, GroundTruth, make_benchmark
from .dsl import DslExpression, compile_feature, compile_predicate
from .evaluate import EvaluationReport, score_segment, stats_screen_baseline
from .features import FeatureEncoder, build_model_matrix, evaluate_features
from .noise import NoiseLabels, NoiseRule, apply_rules, default_rules
from .pipeline import Pipeline, emit_benchmark
from .segment import (
    Segment,
    WeightedTree,
    compute_weights,
    fit_weighted_tree,
    knee_point,
    m_noise,
    m_signal,
    mass_greedy,
    weighted_tree_search,
)
from .stats import (
    AnonymityPolicy,
    InsightSummary,
    anonymity_check,
    bh_fdr,
    bin_numeric,
    build_insight_summary,
    chi_square_test,
    cramers_v,
    point_biserial,
)
from .synth import MockProvider, synthesize_features
from .tabular import ColumnSchema, PairedDataset, Table, load_csv, pair_tables, write_csv

__all__ = [
    "__version__",
    "AnonymityPolicy", "BenchmarkData", "ColumnSchema", "ConfigError",
    "DslError", "DslExpression", "EvaluationReport", "FeatureEncoder",
    "GBTConfig", "GBTModel", "GroundTruth", "InsightSummary",
    "MockProvider", "NoiseLabels", "NoiseRule", "PairedDataset",
    "PairingError", "Pipeline", "ProviderError", "RunConfig", "Segment",
    "ShiftLensError", "StageError", "StaleArtifactError", "SynthesisError",
    "Table", "ValidationError", "WeightedTree",
    "anonymity_check", "apply_rules", "bh_fdr", "bin_numeric",
    "build_insight_summary", "build_model_matrix", "chi_square_test",
    "compile_feature", "compile_predicate", "compute_weights", "config_hash",
    "cramers_v", "default_rules", "emit_benchmark", "evaluate_features",
    "fit_weighted_tree", "knee_point", "load_config", "load_csv",
    "m_noise", "m_signal", "make_benchmark", "mass_greedy", "pair_tables",
    "point_biserial", "score_segment", "stats_screen_baseline",
    "synthesize_features", "train_gbt", "weighted_tree_search", "write_csv",
]
