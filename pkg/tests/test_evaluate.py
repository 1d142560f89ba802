"""Segment scoring and the statistical-screen baseline."""

import json

import numpy as np
import pytest

from shiftlens.evaluate import (
    EvaluationReport,
    project_mask_to_truth,
    score_segment,
    stats_screen_baseline,
)
from shiftlens.errors import ValidationError
from shiftlens.segment import fit_weighted_tree, mass_greedy
from shiftlens.stats import AnonymityPolicy
from shiftlens.tabular import ColumnSchema, Table


def make_mask(n, idx):
    m = np.zeros(n, dtype=bool)
    m[list(idx)] = True
    return m


def test_perfect_match_scores_one():
    t = make_mask(50, range(10))
    rep = score_segment(t, t)
    assert rep.precision == 1.0 and rep.recall == 1.0 and rep.f1 == 1.0
    assert rep.segment_size == 10 and rep.truth_size == 10 and rep.true_positives == 10
    assert not rep.undefined_recall


def test_disjoint_nonempty_scores_zero():
    rep = score_segment(make_mask(50, range(10)), make_mask(50, range(20, 30)))
    assert rep.precision == 0.0 and rep.recall == 0.0 and rep.f1 == 0.0


def test_partial_overlap_formula():
    n = 500
    truth = make_mask(n, range(100))
    mask = make_mask(n, range(10, 130))
    assert mask.sum() == 120 and (mask & truth).sum() == 90
    rep = score_segment(mask, truth)
    p, r = 90 / 120, 90 / 100
    assert rep.precision == pytest.approx(p, rel=1e-12)
    assert rep.recall == pytest.approx(r, rel=1e-12)
    assert rep.f1 == pytest.approx(2 * p * r / (p + r), rel=1e-12)
    assert rep.f1 == pytest.approx(0.8181818181818182, rel=1e-9)


def test_empty_truth_marks_undefined_recall():
    rep = score_segment(make_mask(20, [1, 2]), np.zeros(20, dtype=bool))
    assert rep.undefined_recall
    assert rep.recall == 0.0 and rep.f1 == 0.0 and rep.truth_size == 0


def test_empty_mask_empty_truth():
    rep = score_segment(np.zeros(5, dtype=bool), np.zeros(5, dtype=bool))
    assert rep.precision == 0.0 and rep.f1 == 0.0 and rep.undefined_recall


def test_swapping_mask_and_truth_swaps_p_and_r():
    rng = np.random.default_rng(3)
    for _ in range(25):
        a = rng.random(80) < 0.3
        b = rng.random(80) < 0.4
        if not a.any() or not b.any():
            continue
        fwd = score_segment(a, b)
        rev = score_segment(b, a)
        assert fwd.precision == pytest.approx(rev.recall, abs=1e-15)
        assert fwd.recall == pytest.approx(rev.precision, abs=1e-15)
        assert fwd.f1 == pytest.approx(rev.f1, abs=1e-15)


def test_length_mismatch_rejected():
    with pytest.raises(ValidationError):
        score_segment(np.zeros(4, dtype=bool), np.zeros(5, dtype=bool))
    with pytest.raises(ValidationError):
        score_segment(np.zeros(4, dtype=bool), np.zeros(4, dtype=bool),
                      noise_flags=np.zeros(3, dtype=bool))


def test_contamination_counts_per_mechanism():
    n = 10
    mask = make_mask(n, [2, 3, 7])
    truth = make_mask(n, [2, 7])
    noise = make_mask(n, [2, 3, 5])
    mechs = [[] for _ in range(n)]
    mechs[2] = ["outlier-multiple"]
    mechs[3] = ["duplicate-row", "zero-value"]
    mechs[5] = ["missing-value"]
    rep = score_segment(mask, truth, noise_flags=noise, mechanisms=mechs, label="tree")
    assert rep.noisy_in_segment == 2
    assert rep.contamination == {"outlier-multiple": 1, "duplicate-row": 1, "zero-value": 1}
    assert rep.label == "tree"


def test_report_serialization_and_text():
    rep = score_segment(make_mask(8, [0, 1]), make_mask(8, [1, 2]), label="demo")
    d = json.loads(rep.to_json())
    assert d["label"] == "demo"
    assert d["precision"] == 0.5 and d["recall"] == 0.5
    header = EvaluationReport.text_header()
    row = rep.text_row()
    assert "precision" in header and "f1" in header
    assert row.startswith("demo") and "0.500" in row


def test_project_mask_to_truth_unmatched_false():
    truth_keys = ["a", "b", "c", "d", "e"]
    matched = ["b", "d", "e"]
    mask = np.array([True, False, True])
    out = project_mask_to_truth(truth_keys, matched, mask)
    assert out.tolist() == [False, True, False, False, True]
    with pytest.raises(ValidationError):
        project_mask_to_truth(truth_keys, matched, np.array([True, False]))


def two_flag_table(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.random(n) < 0.5
    b = rng.random(n) < 0.5
    schema = [
        ColumnSchema("K", "text", "key"),
        ColumnSchema("A", "text", "feature"),
        ColumnSchema("B", "text", "feature"),
        ColumnSchema("M", "numeric", "target-metric"),
    ]
    cols = {
        "K": np.array([f"r{i}" for i in range(n)], dtype=object),
        "A": np.array(["yes" if v else "no" for v in a], dtype=object),
        "B": np.array(["yes" if v else "no" for v in b], dtype=object),
        "M": rng.normal(100.0, 10.0, n),
    }
    return Table(schema, cols), a, b


def test_baseline_empty_when_nothing_significant():
    table, a, b = two_flag_table(300, 11)
    rng = np.random.default_rng(12)
    target = (rng.random(300) < 0.5).astype(np.float64)
    policy = AnonymityPolicy(min_slice_size=5, k_threshold=5)
    base = stats_screen_baseline(table, target, policy, q_threshold=1e-6)
    assert base.size == 0
    rep = score_segment(base.mask, a & b)
    assert rep.f1 == 0.0


def test_baseline_recovers_single_perfect_slice():
    n = 300
    cats = np.array((["hit"] * 100) + (["m1"] * 100) + (["m2"] * 100), dtype=object)
    rng = np.random.default_rng(13)
    order = rng.permutation(n)
    cats = cats[order]
    schema = [ColumnSchema("K", "text", "key"), ColumnSchema("GRP", "text", "feature"),
              ColumnSchema("M", "numeric", "target-metric")]
    table = Table(schema, {
        "K": np.array([f"r{i}" for i in range(n)], dtype=object),
        "GRP": cats,
        "M": rng.normal(50.0, 5.0, n),
    })
    target = (cats == "hit").astype(np.float64)
    policy = AnonymityPolicy(min_slice_size=5, k_threshold=5)
    base = stats_screen_baseline(table, target, policy, max_slices=1)
    assert base.size == 100
    assert np.array_equal(base.mask, cats == "hit")
    assert base.describe() == ["GRP == 'hit'"]


def test_conjunction_baseline_overcovers_vs_tree():
    n = 400
    table, a, b = two_flag_table(n, 14)
    truth = a & b
    target = truth.astype(np.float64)
    policy = AnonymityPolicy(min_slice_size=5, k_threshold=5)
    base = stats_screen_baseline(table, target, policy)
    base_rep = score_segment(base.mask, truth, label="stats_screen")

    X = np.column_stack([a.astype(np.float64), b.astype(np.float64)])
    tree = fit_weighted_tree(X, truth.astype(np.int64), np.ones(n), ["A", "B"],
                             max_depth=3, p_shift=target, p_noise=np.zeros(n))
    seg = mass_greedy(tree, target, tau=1.0)
    tree_rep = score_segment(seg.mask, truth, label="tree")

    assert base_rep.recall == 1.0
    assert tree_rep.precision == 1.0
    assert base_rep.precision < tree_rep.precision
    assert base_rep.f1 < tree_rep.f1


def test_baseline_accepts_shared_summary():
    from shiftlens.stats import build_insight_summary

    table, a, b = two_flag_table(250, 15)
    target = (a & b).astype(np.float64)
    policy = AnonymityPolicy(min_slice_size=5, k_threshold=5)
    summary = build_insight_summary(table, target, "target", policy)
    direct = stats_screen_baseline(table, target, policy)
    shared = stats_screen_baseline(table, target, policy, summary=summary)
    assert np.array_equal(direct.mask, shared.mask)
    assert [s.spec.describe() for s in direct.slices] == \
        [s.spec.describe() for s in shared.slices]
