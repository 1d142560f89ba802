"""Stage orchestration: every stage reads persisted artifacts from the
run directory, writes its own, and records them in a manifest stamped
with the config hash so artifacts from an edited config are rejected.

Stage order: summarize (pair + noise labels + two insight summaries) ->
synthesize (two provider runs) -> train (twin classifiers -> p_shift,
p_noise) -> segment (alpha sweep, knee, mass-greedy) -> eval (scores vs
ground truth and the statistical baseline).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__ as _version
from .boosting import GBTModel, train_gbt
from .config import RunConfig, config_hash
from .errors import StageError, StaleArtifactError, ValidationError
from .evaluate import EvaluationReport, project_mask_to_truth, score_segment, stats_screen_baseline
from .features import FeatureEncoder, build_model_matrix
from .noise import NoiseLabels, apply_rules, default_rules
from .segment import Segment, mass_greedy, segment_mask_from_rules, weighted_tree_search
from .stats import InsightSummary, SliceInsight, SliceSpec, build_insight_summary
from .synth import AuditLog, MockProvider, SynthesisResult, provider_from_env, synthesize_features
from .tabular import PairedDataset, load_csv, pair_tables
from .benchgen import GroundTruth, make_benchmark
from .tabular import write_csv

__all__ = ["Pipeline", "STAGES", "emit_benchmark"]

STAGES = ("summarize", "synthesize", "train", "segment", "eval")

ARTIFACTS = {
    "summarize": ["pairing.csv", "noise_labels.csv",
                  "insights_intervention.json", "insights_noise.json"],
    "synthesize": ["features_intervention.json", "features_noise.json", "provider_audit.jsonl"],
    "train": ["model_c.json", "probs.csv", "train_meta.json"],
    "segment": ["pareto.json", "segment_rules.json", "segment_mask.csv"],
    "eval": ["report.json", "report.txt"],
}


def _fmt_float(x: float) -> str:
    return repr(float(x))


class Pipeline:
    def __init__(self, config: RunConfig):
        self.config = config
        self.hash = config_hash(config)
        self.out = config.output_dir
        os.makedirs(self.out, exist_ok=True)
        self._pair: PairedDataset | None = None

    # -- manifest ---------------------------------------------------------

    def _manifest_path(self) -> str:
        return os.path.join(self.out, "manifest.json")

    def _load_manifest(self) -> dict:
        path = self._manifest_path()
        if not os.path.exists(path):
            return {"config_hash": self.hash, "version": _version, "stages": {}}
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("config_hash") != self.hash:
            raise StaleArtifactError(
                f"run directory {self.out!r} holds artifacts for config hash "
                f"{manifest.get('config_hash')!r}, current config hashes to {self.hash!r}; "
                "use a fresh output_dir or delete the stale run"
            )
        return manifest

    def _mark_complete(self, stage: str, extra: dict | None = None) -> None:
        manifest = self._load_manifest()
        entry = {"complete": True, "artifacts": ARTIFACTS[stage]}
        if extra:
            entry.update(extra)
        manifest["stages"][stage] = entry
        manifest["config_hash"] = self.hash
        manifest["version"] = _version
        with open(self._manifest_path(), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")

    def _require_stage(self, stage: str) -> dict:
        manifest = self._load_manifest()
        entry = manifest["stages"].get(stage)
        if not entry or not entry.get("complete"):
            raise StageError(f"stage {stage!r} has not produced artifacts in {self.out!r}; "
                             f"run it first")
        return entry

    def _path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def _write_json(self, name: str, doc) -> None:
        with open(self._path(name), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")

    def _read_json(self, name: str):
        with open(self._path(name), encoding="utf-8") as fh:
            return json.load(fh)

    # -- shared loading -----------------------------------------------------

    def _paired(self) -> PairedDataset:
        if self._pair is None:
            control = load_csv(self.config.control_csv, self.config.schema)
            test = load_csv(self.config.test_csv, self.config.schema)
            self._pair = pair_tables(control, test, self.config.pair_tolerance)
        return self._pair

    def _load_noise_labels_matched(self, pair: PairedDataset) -> np.ndarray:
        by_key = {}
        with open(self._path("noise_labels.csv"), newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                by_key[row["key"]] = int(row["label"])
        return np.array([by_key[k] for k in pair.matched_keys], dtype=np.uint8)

    def _load_y_shift(self, pair: PairedDataset) -> np.ndarray:
        keys, ys = [], []
        with open(self._path("pairing.csv"), newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                keys.append(row["key"])
                ys.append(int(row["y_shift"]))
        if keys != list(pair.matched_keys):
            raise StaleArtifactError("pairing.csv no longer matches the input tables")
        return np.array(ys, dtype=np.uint8)

    def _summary_from_artifact(self, name: str) -> InsightSummary:
        doc = self._read_json(name)
        insights = []
        for d in doc["insights"]:
            spec = SliceSpec(
                column=d["column"], kind=d["kind"], category=d["category"],
                lo=d["lo"], hi=d["hi"], closed_right=d["closed_right"],
            )
            insights.append(SliceInsight(
                spec=spec, n_in=d["n_in"], rate_in=d["rate_in"], rate_out=d["rate_out"],
                chi2=d["chi2"], p_value=d["p_value"], q_value=d["q_value"],
                cramers_v=d["cramers_v"], point_biserial=d["point_biserial"],
                degenerate=d["degenerate"],
            ))
        return InsightSummary(
            fingerprint=doc["fingerprint"], target_name=doc["target_name"],
            n_rows=doc["n_rows"], n_bins=doc["n_bins"],
            n_slices_enumerated=doc["n_slices_enumerated"],
            n_suppressed=doc["n_suppressed"], schema_context=doc["schema_context"],
            insights=insights,
        )

    def _expressions_from_artifact(self, name: str):
        from .synth import FeatureDefinition, compile_expression

        doc = self._read_json(name)
        exprs = {}
        for d in doc["definitions"]:
            if d["status"] != "expression_ready":
                continue
            definition = FeatureDefinition(
                d["name"], list(d["source_columns"]), d["logic_description"],
                d["expression"], d["status"],
            )
            exprs[definition.name] = compile_expression(
                definition, definition.expression, self.config.schema
            )
        return exprs

    def _encoder(self, pair: PairedDataset) -> FeatureEncoder:
        return FeatureEncoder(max_onehot=self.config.max_onehot).fit(pair.test_matched)

    # -- stages ---------------------------------------------------------------

    def summarize(self) -> dict:
        """Pair the tables, infer noise labels, export both anonymity-
        gated insight summaries."""
        pair = self._paired()
        if len(pair.matched_keys) == 0:
            raise StageError("no rows matched between control and test tables")

        with open(self._path("pairing.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "y_shift"])
            for k, y in zip(pair.matched_keys, pair.y_shift):
                w.writerow([k, int(y)])

        rules = self.config.noise_rules
        if rules is None:
            rules = default_rules(pair.test)
        labels = apply_rules(pair.test, rules, pair.control)
        with open(self._path("noise_labels.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "label", "rules"])
            for row in labels.rows_for_csv([str(k) for k in pair.test.keys()]):
                w.writerow(row)

        matched = pair.test_matched
        policy = self.config.anonymity_policy(matched.n_rows)
        y = pair.y_shift.astype(np.uint8)
        noise_matched = labels.labels[pair.test_idx]

        summary_c = build_insight_summary(matched, y, "metric_shift", policy,
                                          n_bins=self.config.n_bins)
        summary_n = build_insight_summary(matched, noise_matched, "inferred_noise", policy,
                                          n_bins=self.config.n_bins)
        self._write_json("insights_intervention.json", summary_c.to_dict())
        self._write_json("insights_noise.json", summary_n.to_dict())

        info = {
            "n_matched": len(pair.matched_keys),
            "n_unmatched_control": len(pair.unmatched_control_keys),
            "n_unmatched_test": len(pair.unmatched_test_keys),
            "y_shift_positives": int(y.sum()),
            "noise_flagged_total": labels.n_flagged,
            "noise_flagged_matched": int(noise_matched.sum()),
        }
        self._mark_complete("summarize", info)
        return info

    def _provider(self):
        settings = self.config.provider
        if settings.kind == "http":
            return provider_from_env()
        canned = {}
        if settings.canned_path:
            with open(settings.canned_path, encoding="utf-8") as fh:
                canned = json.load(fh)
        return MockProvider(canned=canned, generate=settings.generate)

    def synthesize(self) -> dict:
        """Run the two-phase feature synthesis once per task."""
        self._require_stage("summarize")
        provider = self._provider()
        audit = AuditLog(self._path("provider_audit.jsonl"))
        if os.path.exists(audit.path):
            os.remove(audit.path)

        info = {}
        for task, artifact, insight_name in (
            ("intervention", "features_intervention.json", "insights_intervention.json"),
            ("noise", "features_noise.json", "insights_noise.json"),
        ):
            summary = self._summary_from_artifact(insight_name)
            result = synthesize_features(
                summary, self.config.schema, task, provider, audit=audit,
                max_retries=self.config.provider.max_retries,
            )
            self._write_json(artifact, {
                "task": task,
                "definitions": [d.to_dict() for d in result.definitions],
            })
            info[f"{task}_features"] = len(result.expressions)
        self._mark_complete("synthesize", info)
        return info

    def train(self) -> dict:
        """Fit the shift-membership and noise classifiers, emit per-row
        probabilities for every matched analysis row."""
        self._require_stage("summarize")
        self._require_stage("synthesize")
        pair = self._paired()
        matched = pair.test_matched
        y = self._load_y_shift(pair)
        noise_y = self._load_noise_labels_matched(pair)
        encoder = self._encoder(pair)

        if len(np.unique(y)) < 2:
            raise StageError(
                "surrogate shift labels are single-class; there is no metric "
                "shift to attribute on these tables"
            )

        exprs_c = self._expressions_from_artifact("features_intervention.json")
        exprs_n = self._expressions_from_artifact("features_noise.json")
        Xc, names_c = build_model_matrix(matched, encoder, exprs_c)
        model_c = train_gbt(Xc, y, self.config.model_c, feature_names=names_c)
        p_c = model_c.predict_proba(Xc)
        with open(self._path("model_c.json"), "w", encoding="utf-8") as fh:
            fh.write(model_c.to_json())

        meta = {
            "model_c": {
                "n_features": len(names_c),
                "holdout_accuracy": model_c.holdout_accuracy,
                "holdout_size": model_c.holdout_size,
                "final_train_loss": model_c.train_losses[-1],
            },
        }
        if len(np.unique(noise_y)) < 2:
            # no usable noise signal: fall back to one smoothed constant
            rate = (float(noise_y.sum()) + 1.0) / (len(noise_y) + 2.0)
            p_n = np.full(len(noise_y), rate)
            meta["model_n"] = {"skipped": "single-class noise labels",
                               "constant_probability": rate}
            if os.path.exists(self._path("model_n.json")):
                os.remove(self._path("model_n.json"))
        else:
            Xn, names_n = build_model_matrix(matched, encoder, exprs_n)
            model_n = train_gbt(Xn, noise_y, self.config.model_n, feature_names=names_n)
            p_n = model_n.predict_proba(Xn)
            with open(self._path("model_n.json"), "w", encoding="utf-8") as fh:
                fh.write(model_n.to_json())
            meta["model_n"] = {
                "n_features": len(names_n),
                "holdout_accuracy": model_n.holdout_accuracy,
                "holdout_size": model_n.holdout_size,
                "final_train_loss": model_n.train_losses[-1],
            }

        with open(self._path("probs.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "p_shift", "p_noise"])
            for k, pc, pn in zip(pair.matched_keys, p_c, p_n):
                w.writerow([k, _fmt_float(pc), _fmt_float(pn)])

        self._write_json("train_meta.json", meta)
        self._mark_complete("train", {"model_n_skipped": "skipped" in meta.get("model_n", {})})
        return meta

    def _load_probs(self, pair: PairedDataset) -> tuple[np.ndarray, np.ndarray]:
        keys, pcs, pns = [], [], []
        with open(self._path("probs.csv"), newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                keys.append(row["key"])
                pcs.append(float(row["p_shift"]))
                pns.append(float(row["p_noise"]))
        if keys != list(pair.matched_keys):
            raise StaleArtifactError("probs.csv no longer matches the input tables")
        return np.array(pcs), np.array(pns)

    def segment(self) -> dict:
        """Sweep the alpha grid, pick the knee, extract the segment."""
        self._require_stage("train")
        pair = self._paired()
        matched = pair.test_matched
        y = self._load_y_shift(pair)
        p_c, p_n = self._load_probs(pair)
        encoder = self._encoder(pair)

        seg_cfg = self.config.segmentation
        if seg_cfg.use_derived_features:
            exprs = self._expressions_from_artifact("features_intervention.json")
            X, names = build_model_matrix(matched, encoder, exprs)
        else:
            X, names = encoder.transform(matched), list(encoder.feature_names)

        best, points = weighted_tree_search(
            X, y, p_c, p_n, names,
            alphas=seg_cfg.alpha_grid,
            max_depth=seg_cfg.max_depth,
            class_weights=seg_cfg.class_weights,
            min_leaf_weight=seg_cfg.min_leaf_weight,
            weighted_leaf_corr=seg_cfg.weighted_leaf_corr,
        )
        segment = mass_greedy(best.tree, p_c, seg_cfg.tau)

        self._write_json("pareto.json", {
            "alpha_star": best.alpha,
            "points": [pt.to_dict() for pt in points],
            "chosen_tree_leaves": [
                {
                    "leaf_id": leaf.leaf_id,
                    "class": leaf.class_label,
                    "n_rows": int(len(leaf.rows)),
                    "weight_mass": _fmt_float(leaf.weight_mass),
                    "pc_mean": _fmt_float(leaf.pc_mean),
                    "pn_mean": _fmt_float(leaf.pn_mean),
                    "conditions": [c.to_dict() for c in leaf.conditions],
                }
                for leaf in best.tree.leaves
            ],
        })
        self._write_json("segment_rules.json", {
            "alpha_star": best.alpha,
            "tau": seg_cfg.tau,
            "covered_mass": _fmt_float(segment.covered_mass),
            "target_mass": _fmt_float(segment.target_mass),
            "empty": segment.empty,
            "leaf_ids": segment.leaf_ids,
            "rules": [[c.to_dict() for c in conds] for conds in segment.rules],
        })
        with open(self._path("segment_mask.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "in_segment"])
            for k, m in zip(pair.matched_keys, segment.mask):
                w.writerow([k, int(m)])

        info = {"alpha_star": best.alpha, "segment_size": segment.size,
                "segment_empty": segment.empty}
        self._mark_complete("segment", info)
        return info

    def _load_segment_mask(self, pair: PairedDataset) -> np.ndarray:
        keys, ms = [], []
        with open(self._path("segment_mask.csv"), newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                keys.append(row["key"])
                ms.append(int(row["in_segment"]))
        if keys != list(pair.matched_keys):
            raise StaleArtifactError("segment_mask.csv no longer matches the input tables")
        return np.array(ms, dtype=bool)

    def evaluate(self) -> dict:
        """Score the extracted segment and the stats-screen baseline
        against ground truth."""
        self._require_stage("segment")
        if not self.config.truth_csv:
            raise StageError("eval stage needs truth_csv in the config")
        truth = GroundTruth.read_csv(self.config.truth_csv)
        pair = self._paired()
        mask = self._load_segment_mask(pair)

        summary_c = self._summary_from_artifact("insights_intervention.json")
        policy = self.config.anonymity_policy(pair.test_matched.n_rows)
        baseline = stats_screen_baseline(
            pair.test_matched, self._load_y_shift(pair), policy,
            q_threshold=self.config.baseline_q_threshold,
            max_slices=self.config.baseline_max_slices,
            n_bins=self.config.n_bins,
            summary=summary_c,
        )

        matched = list(pair.matched_keys)
        pred_seg = project_mask_to_truth(truth.keys, matched, mask)
        pred_base = project_mask_to_truth(truth.keys, matched, baseline.mask)
        truth_flags = truth.intervention.astype(bool)
        noise_flags = truth.noise.astype(bool)

        rep_seg = score_segment(pred_seg, truth_flags, noise_flags, truth.mechanisms,
                                label="weighted-tree segment")
        rep_base = score_segment(pred_base, truth_flags, noise_flags, truth.mechanisms,
                                 label="stats-screen baseline")

        seg_info = self._read_json("segment_rules.json")
        report = {
            "alpha_star": seg_info["alpha_star"],
            "segment": rep_seg.to_dict(),
            "baseline": rep_base.to_dict(),
            "baseline_slices": [s.spec.describe() for s in baseline.slices],
        }
        self._write_json("report.json", report)
        lines = [EvaluationReport.text_header(), rep_seg.text_row(), rep_base.text_row()]
        with open(self._path("report.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

        self._mark_complete("eval", {"segment_f1": rep_seg.f1, "baseline_f1": rep_base.f1})
        return report

    def run(self) -> dict:
        """All stages in order; evaluation only when ground truth is configured."""
        out = {"summarize": self.summarize()}
        out["synthesize"] = self.synthesize()
        out["train"] = self.train()
        out["segment"] = self.segment()
        if self.config.truth_csv:
            out["eval"] = self.evaluate()
        return out


def emit_benchmark(out_dir: str, preset: str = "t1", noise_level: str = "n0",
                   n_rows: int = 10000, seed: int = 0) -> dict:
    """Write control/test/truth CSVs plus a ready-to-run config JSON."""
    os.makedirs(out_dir, exist_ok=True)
    bench = make_benchmark(preset, noise_level, n_rows=n_rows, seed=seed)
    control_path = os.path.join(out_dir, "control.csv")
    test_path = os.path.join(out_dir, "test.csv")
    truth_path = os.path.join(out_dir, "truth.csv")
    write_csv(bench.control, control_path)
    write_csv(bench.test, test_path)
    bench.truth.write_csv(truth_path)

    from .config import SegmentationSettings

    config = RunConfig(
        control_csv=control_path,
        test_csv=test_path,
        schema=bench.control.schema,
        output_dir=os.path.join(out_dir, "run"),
        seed=seed,
        truth_csv=truth_path,
        # a positive leaf must beat 1/(1+w1) of shift-labeled mass; 1:5 keeps
        # regions whose shift labels come only from injected noise (<= 15%
        # per mechanism) below the flip point while planted leaves sit near 1
        segmentation=SegmentationSettings(class_weights={0: 1.0, 1: 5.0}),
    )
    config_path = os.path.join(out_dir, "config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(config.to_json() + "\n")
    return {
        "control_csv": control_path,
        "test_csv": test_path,
        "truth_csv": truth_path,
        "config_json": config_path,
        "n_rows": bench.test.n_rows,
        "planted_fraction": bench.planted_fraction,
        "preset": preset,
        "noise_level": noise_level,
    }
