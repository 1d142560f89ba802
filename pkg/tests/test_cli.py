"""CLI subcommands, exit codes, and artifact plumbing."""

import io
import json
import os
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pytest

from shiftlens.benchgen import GroundTruth
from shiftlens.cli import main
from shiftlens.evaluate import project_mask_to_truth, score_segment


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("bench"))
    code, out, err = run_cli(["bench", d, "--preset", "t1", "--noise", "n0",
                              "--rows", "400", "--seed", "3"])
    assert code == 0, err
    return d, json.loads(out)


@pytest.fixture(scope="module")
def full_run(bench_dir):
    d, info = bench_dir
    code, out, err = run_cli(["run", info["config_json"]])
    assert code == 0, err
    return d, info, json.loads(out)


def test_bench_writes_inputs(bench_dir):
    d, info = bench_dir
    for key in ("control_csv", "test_csv", "truth_csv", "config_json"):
        assert os.path.isfile(info[key])
    assert info["n_rows"] == 400
    assert info["preset"] == "t1" and info["noise_level"] == "n0"
    assert info["planted_fraction"] > 0


def test_bench_rejects_tiny_row_count(tmp_path):
    code, out, err = run_cli(["bench", str(tmp_path / "b"), "--rows", "50"])
    assert code == 1
    assert "validation error" in err


def test_run_executes_all_stages(full_run):
    d, info, out = full_run
    assert set(out) == {"summarize", "synthesize", "train", "segment", "eval"}
    run_dir = os.path.join(d, "run")
    for name in ("manifest.json", "pairing.csv", "probs.csv", "segment_mask.csv",
                 "pareto.json", "segment_rules.json", "report.json", "report.txt"):
        assert os.path.isfile(os.path.join(run_dir, name))
    assert out["segment"]["segment_size"] > 0


def test_eval_report_matches_direct_scoring(full_run):
    d, info, _ = full_run
    run_dir = os.path.join(d, "run")
    with open(os.path.join(run_dir, "report.json"), encoding="utf-8") as fh:
        report = json.load(fh)

    keys, flags = [], []
    with open(os.path.join(run_dir, "segment_mask.csv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            k, m = line.rstrip("\n").split(",")
            keys.append(k)
            flags.append(int(m))
    truth = GroundTruth.read_csv(info["truth_csv"])
    pred = project_mask_to_truth(truth.keys, keys, np.array(flags, dtype=bool))
    direct = score_segment(pred, truth.intervention.astype(bool),
                           truth.noise.astype(bool), truth.mechanisms)

    seg = report["segment"]
    assert seg["precision"] == direct.precision
    assert seg["recall"] == direct.recall
    assert seg["f1"] == direct.f1
    assert seg["segment_size"] == direct.segment_size
    assert seg["truth_size"] == direct.truth_size
    assert seg["noisy_in_segment"] == direct.noisy_in_segment


def test_stage_rerun_is_deterministic(full_run):
    d, info, _ = full_run
    run_dir = os.path.join(d, "run")
    targets = ["segment_mask.csv", "pareto.json", "report.json", "report.txt"]
    before = {}
    for name in targets:
        with open(os.path.join(run_dir, name), "rb") as fh:
            before[name] = fh.read()
    code, _, err = run_cli(["segment", info["config_json"]])
    assert code == 0, err
    code, _, err = run_cli(["eval", info["config_json"]])
    assert code == 0, err
    for name in targets:
        with open(os.path.join(run_dir, name), "rb") as fh:
            assert fh.read() == before[name], name


def test_missing_config_exits_validation(tmp_path):
    code, _, err = run_cli(["run", str(tmp_path / "absent.json")])
    assert code == 1
    assert "validation error" in err

    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    code, _, err = run_cli(["run", str(bad)])
    assert code == 1


def test_missing_artifacts_exit_stage(bench_dir, tmp_path):
    d, info = bench_dir
    with open(info["config_json"], encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["output_dir"] = str(tmp_path / "fresh_run")
    cfg_path = tmp_path / "fresh.json"
    cfg_path.write_text(json.dumps(doc))
    code, _, err = run_cli(["train", str(cfg_path)])
    assert code == 2
    assert "stage error" in err
    code, _, err = run_cli(["segment", str(cfg_path)])
    assert code == 2


def test_stale_artifacts_rejected(full_run, tmp_path):
    d, info, _ = full_run
    with open(info["config_json"], encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["seed"] = doc["seed"] + 1  # new hash, same output dir
    cfg_path = tmp_path / "edited.json"
    cfg_path.write_text(json.dumps(doc))
    code, _, err = run_cli(["train", str(cfg_path)])
    assert code == 2
    assert "config" in err


def test_provider_failure_exits_three(bench_dir, tmp_path):
    d, info = bench_dir
    with open(info["config_json"], encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["output_dir"] = str(tmp_path / "noprov_run")
    doc["provider"] = {"kind": "mock", "generate": False, "max_retries": 0}
    cfg_path = tmp_path / "noprov.json"
    cfg_path.write_text(json.dumps(doc))
    code, _, err = run_cli(["summarize", str(cfg_path)])
    assert code == 0, err
    code, _, err = run_cli(["synthesize", str(cfg_path)])
    assert code == 3
    assert "provider error" in err


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit):
        run_cli(["frobnicate"])
    with pytest.raises(SystemExit):
        run_cli([])
