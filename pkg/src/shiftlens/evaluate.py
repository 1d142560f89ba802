"""Scoring of predicted segments against ground truth, plus the
single-condition statistical baseline the tree segment must beat.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .stats import AnonymityPolicy, InsightSummary, SliceInsight, build_insight_summary, slice_mask
from .tabular import Table

__all__ = [
    "EvaluationReport",
    "score_segment",
    "project_mask_to_truth",
    "BaselineSegment",
    "stats_screen_baseline",
]


@dataclass
class EvaluationReport:
    precision: float
    recall: float
    f1: float
    segment_size: int
    truth_size: int
    true_positives: int
    undefined_recall: bool
    contamination: dict[str, int] = field(default_factory=dict)
    noisy_in_segment: int = 0
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "segment_size": self.segment_size,
            "truth_size": self.truth_size,
            "true_positives": self.true_positives,
            "undefined_recall": self.undefined_recall,
            "noisy_in_segment": self.noisy_in_segment,
            "contamination": dict(sorted(self.contamination.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def text_row(self) -> str:
        return (f"{self.label:<24} {self.precision:>9.3f} {self.recall:>9.3f} "
                f"{self.f1:>9.3f} {self.segment_size:>8d} {self.noisy_in_segment:>9d}")

    @staticmethod
    def text_header() -> str:
        head = (f"{'method':<24} {'precision':>9} {'recall':>9} "
                f"{'f1':>9} {'size':>8} {'noisy_in':>9}")
        return head + "\n" + "-" * len(head)


def score_segment(mask: np.ndarray, truth_flags: np.ndarray,
                  noise_flags: np.ndarray | None = None,
                  mechanisms: list[list[str]] | None = None,
                  label: str = "") -> EvaluationReport:
    """Row-level precision/recall/F1 of a predicted segment, with noise
    contamination counts (segment rows that are ground-truth noisy,
    broken down by mechanism) when noise truth is supplied.
    """
    mask = np.asarray(mask, dtype=bool)
    truth = np.asarray(truth_flags, dtype=bool)
    if mask.shape != truth.shape:
        raise ValidationError("mask and truth_flags must have equal length")
    tp = int((mask & truth).sum())
    seg = int(mask.sum())
    pos = int(truth.sum())
    precision = tp / seg if seg else 0.0
    undefined = pos == 0
    recall = 0.0 if undefined else tp / pos
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)

    contamination: dict[str, int] = {}
    noisy_in = 0
    if noise_flags is not None:
        noise = np.asarray(noise_flags, dtype=bool)
        if noise.shape != mask.shape:
            raise ValidationError("noise_flags must align with mask")
        noisy_in = int((mask & noise).sum())
        if mechanisms is not None:
            for i in np.flatnonzero(mask & noise):
                for mech in mechanisms[int(i)]:
                    contamination[mech] = contamination.get(mech, 0) + 1

    return EvaluationReport(
        precision=precision, recall=recall, f1=f1, segment_size=seg, truth_size=pos,
        true_positives=tp, undefined_recall=undefined,
        contamination=contamination, noisy_in_segment=noisy_in, label=label,
    )


def project_mask_to_truth(truth_keys: list[str], matched_keys: list[str],
                          mask: np.ndarray) -> np.ndarray:
    """Lift a mask over matched analysis rows onto ground-truth rows by
    key; truth rows with no matched counterpart are predicted False.
    """
    mask = np.asarray(mask, dtype=bool)
    if len(matched_keys) != len(mask):
        raise ValidationError("mask length must equal matched key count")
    selected = {k for k, m in zip(matched_keys, mask) if m}
    return np.array([k in selected for k in truth_keys], dtype=bool)


@dataclass
class BaselineSegment:
    mask: np.ndarray
    slices: list[SliceInsight]
    q_threshold: float
    max_slices: int

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def describe(self) -> list[str]:
        return [s.spec.describe() for s in self.slices]


def stats_screen_baseline(
    table: Table,
    target: np.ndarray,
    policy: AnonymityPolicy,
    q_threshold: float = 0.05,
    max_slices: int = 10,
    n_bins: int = 10,
    summary: InsightSummary | None = None,
) -> BaselineSegment:
    """Union of the strongest significant single-condition slices.

    Slices come pre-ranked (ascending q, then descending effect size)
    from the shared, anonymity-gated insight summary; the first
    max_slices with q <= q_threshold form the baseline segment.
    """
    if summary is None:
        summary = build_insight_summary(table, target, "target", policy, n_bins=n_bins)
    chosen = [ins for ins in summary.insights if ins.q_value <= q_threshold][:max_slices]
    mask = np.zeros(table.n_rows, dtype=bool)
    for ins in chosen:
        mask |= slice_mask(table, ins.spec)
    return BaselineSegment(mask=mask, slices=chosen, q_threshold=q_threshold, max_slices=max_slices)
