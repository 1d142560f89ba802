"""Two-phase feature synthesis: prompts, providers, validation, retries."""

import json

import numpy as np
import pytest

from shiftlens.errors import DslError, ProviderError, SynthesisError, ValidationError
from shiftlens.stats import AnonymityPolicy, build_insight_summary
from shiftlens.synth import (
    DEFS_BEGIN,
    DEFS_END,
    INSIGHTS_BEGIN,
    INSIGHTS_END,
    MAX_FEATURES,
    SCHEMA_BEGIN,
    SCHEMA_END,
    AuditLog,
    FeatureDefinition,
    MockProvider,
    ProviderResponse,
    build_definition_prompt,
    build_expression_prompt,
    call_provider,
    compile_expression,
    parse_validate_definitions,
    synthesize_features,
)
from shiftlens.tabular import ColumnSchema, Table


def demo_table(n=300, seed=0):
    rng = np.random.default_rng(seed)
    schema = [
        ColumnSchema("ID", "text", "key"),
        ColumnSchema("AGE", "numeric"),
        ColumnSchema("PAYER_NAME", "categorical"),
        ColumnSchema("INCOME", "numeric"),
        ColumnSchema("COST", "numeric", "target-metric"),
    ]
    age = rng.integers(18, 90, size=n).astype(np.float64)
    payer = rng.choice(["Medicare", "Aetna", "Medicaid"], size=n).astype(object)
    income = rng.uniform(1e4, 2e5, size=n)
    cols = {
        "ID": np.array([f"r{i}" for i in range(n)], dtype=object),
        "AGE": age, "PAYER_NAME": payer, "INCOME": income,
        "COST": rng.uniform(10, 100, size=n),
    }
    return Table(schema, cols), (age > 60) & (payer == "Medicare")


def demo_summary():
    t, hot = demo_table()
    target = hot.astype(np.float64)
    policy = AnonymityPolicy(min_slice_size=2, k_threshold=1)
    return t, build_insight_summary(t, target, "shift", policy)


SCHEMA_CONTEXT = [
    {"name": "AGE", "dtype": "numeric"},
    {"name": "PAYER_NAME", "dtype": "categorical"},
    {"name": "INCOME", "dtype": "numeric"},
]


def test_definition_prompt_carries_markers_and_aggregates():
    _, summary = demo_summary()
    prompt = build_definition_prompt(summary, SCHEMA_CONTEXT, "intervention")
    for marker in (SCHEMA_BEGIN, SCHEMA_END, INSIGHTS_BEGIN, INSIGHTS_END):
        assert marker in prompt
    assert f"at most {MAX_FEATURES}" in prompt
    # embedded blocks parse back as strict JSON
    insights_blob = prompt.split(INSIGHTS_BEGIN)[1].split(INSIGHTS_END)[0]
    parsed = json.loads(insights_blob)
    assert parsed["insights"]
    schema_blob = prompt.split(SCHEMA_BEGIN)[1].split(SCHEMA_END)[0]
    assert {c["name"] for c in json.loads(schema_blob)} == {"AGE", "PAYER_NAME", "INCOME"}


def test_task_framing_is_the_only_difference():
    _, summary = demo_summary()
    a = build_definition_prompt(summary, SCHEMA_CONTEXT, "intervention").splitlines()
    b = build_definition_prompt(summary, SCHEMA_CONTEXT, "noise").splitlines()
    assert len(a) == len(b)
    diff = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
    # textual diff oracle: exactly one contiguous framing block differs
    assert diff
    assert diff == list(range(diff[0], diff[0] + len(diff)))
    assert all(i < 6 for i in diff)


def test_definition_prompt_rejects_bad_task_and_empty_summary():
    t, summary = demo_summary()
    with pytest.raises(ValidationError):
        build_definition_prompt(summary, SCHEMA_CONTEXT, "other")
    import dataclasses
    empty = dataclasses.replace(summary, insights=[])
    with pytest.raises(ValidationError):
        build_definition_prompt(empty, SCHEMA_CONTEXT, "intervention")


def test_expression_prompt_lists_shared_columns_once():
    defs = [
        FeatureDefinition("f1", ["AGE", "INCOME"], "ratio", status="validated"),
        FeatureDefinition("f2", ["AGE", "INCOME"], "sum", status="validated"),
    ]
    prompt = build_expression_prompt(defs)
    line = next(l for l in prompt.splitlines() if l.startswith("Columns referenced"))
    assert line.count("AGE") == 1 and line.count("INCOME") == 1
    assert DEFS_BEGIN in prompt and DEFS_END in prompt
    # grammar documented inline
    assert "safe_div" in prompt


def test_expression_prompt_requires_validated_defs():
    with pytest.raises(ValidationError):
        build_expression_prompt([])
    with pytest.raises(ValidationError):
        build_expression_prompt([FeatureDefinition("f", ["AGE"], "x", status="proposed")])


class FlakyProvider:
    """Fails with transport errors n times, then delegates to a mock."""

    model_id = "flaky"

    def __init__(self, failures, inner):
        self.failures = failures
        self.inner = inner
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        if self.calls <= self.failures:
            raise ProviderError("transient")
        return self.inner.complete(prompt)


class CannedText:
    model_id = "canned"

    def __init__(self, texts):
        self.texts = list(texts)

    def complete(self, prompt):
        return self.texts.pop(0)


def test_call_provider_backoff_schedule():
    audit = AuditLog()
    sleeps = []
    provider = FlakyProvider(2, CannedText(['{"ok": true}']))
    resp = call_provider(provider, "ping", audit, "phase-a", max_retries=3,
                         backoff_base=0.5, sleep=sleeps.append)
    assert resp.payload == {"ok": True}
    # base * 2^attempt for each failed attempt
    assert sleeps == [0.5, 1.0]
    assert [e["attempt"] for e in audit.entries] == [0, 1, 2]
    assert [e["call_index"] for e in audit.entries] == [0, 1, 2]
    assert audit.entries[0]["ok"] is False and audit.entries[2]["ok"] is True


def test_call_provider_exhausts_retries():
    audit = AuditLog()
    provider = FlakyProvider(10, CannedText([]))
    with pytest.raises(ProviderError):
        call_provider(provider, "ping", audit, "p", max_retries=2, sleep=lambda s: None)
    assert provider.calls == 3


def test_call_provider_keeps_unparseable_text():
    audit = AuditLog()
    resp = call_provider(CannedText(["not json"]), "ping", audit, "p", sleep=lambda s: None)
    assert resp.payload is None and resp.raw_text == "not json"
    assert audit.entries[0]["parse_error"]


def test_audit_log_jsonl_has_no_timestamps(tmp_path):
    path = str(tmp_path / "audit.jsonl")
    audit = AuditLog(path)
    call_provider(CannedText(['{"a": 1}']), "hello", audit, "p", sleep=lambda s: None)
    lines = open(path).read().splitlines()
    entry = json.loads(lines[0])
    assert entry["prompt"] == "hello"
    assert entry["call_index"] == 0
    assert not any("time" in k or "date" in k for k in entry)


def make_resp(payload):
    return ProviderResponse(raw_text=json.dumps(payload), payload=payload,
                            model_id="m", temperature=0.0)


def test_validation_drops_malformed_definitions():
    payload = {"features": [
        {"name": "good_one", "source_columns": ["AGE"], "logic_description": "x"},
        {"name": "bad name!", "source_columns": ["AGE"], "logic_description": "x"},
        {"name": "unknown_col", "source_columns": ["WAT"], "logic_description": "x"},
        {"name": "good_one", "source_columns": ["AGE"], "logic_description": "dup"},
        {"name": "AGE", "source_columns": ["AGE"], "logic_description": "collides"},
        {"name": "no_logic", "source_columns": ["AGE"], "logic_description": ""},
        {"name": "empty_cols", "source_columns": [], "logic_description": "x"},
        "not even a dict",
        {"name": "reserved", "source_columns": ["AGE"], "logic_description": "x"},
    ]}
    defs = parse_validate_definitions(make_resp(payload), ["AGE", "INCOME"],
                                      reserved_names={"reserved"})
    assert [d.name for d in defs] == ["good_one"]
    assert defs[0].status == "validated"


def test_validation_caps_feature_count():
    payload = {"features": [
        {"name": f"f{i}", "source_columns": ["AGE"], "logic_description": "x"}
        for i in range(MAX_FEATURES + 5)
    ]}
    defs = parse_validate_definitions(make_resp(payload), ["AGE"])
    assert len(defs) == MAX_FEATURES


def test_validation_requires_survivors():
    with pytest.raises(SynthesisError):
        parse_validate_definitions(make_resp({"features": []}), ["AGE"])
    with pytest.raises(SynthesisError):
        parse_validate_definitions(make_resp({"nope": 1}), ["AGE"])


def test_compile_expression_restricted_to_source_columns():
    schema = [ColumnSchema("AGE", "numeric"), ColumnSchema("INCOME", "numeric")]
    d = FeatureDefinition("f", ["AGE"], "x", status="validated")
    compile_expression(d, "AGE + 1", schema)
    with pytest.raises(DslError):
        compile_expression(d, "INCOME + 1", schema)


def test_mock_provider_replays_canned_by_hash():
    import hashlib
    prompt = "custom prompt"
    key = hashlib.sha256(prompt.encode()).hexdigest()
    mock = MockProvider(canned={key: '{"x": 1}'}, generate=False)
    assert mock.complete(prompt) == '{"x": 1}'
    with pytest.raises(ProviderError):
        mock.complete("different prompt")


def test_synthesize_features_end_to_end_mock():
    t, summary = demo_summary()
    result = synthesize_features(summary, t.schema, "intervention", MockProvider(),
                                 sleep=lambda s: None)
    assert result.task == "intervention"
    assert 1 <= len(result.expressions) <= MAX_FEATURES
    ready = result.ready_names()
    assert set(result.expressions) == set(ready)
    # expressions evaluate on the source table
    for name, expr in result.expressions.items():
        values, _ = expr.evaluate(t)
        assert values.shape == (len(t),)
    # the audit holds full prompts for both phases
    phases = [e["phase"] for e in result.audit.entries]
    assert "definitions" in phases[0]
    assert any("expressions" in p for p in phases)


def test_synthesize_features_is_deterministic():
    t, summary = demo_summary()
    r1 = synthesize_features(summary, t.schema, "intervention", MockProvider(), sleep=lambda s: None)
    r2 = synthesize_features(summary, t.schema, "intervention", MockProvider(), sleep=lambda s: None)
    assert [d.to_dict() for d in r1.definitions] == [d.to_dict() for d in r2.definitions]
    assert sorted(r1.expressions) == sorted(r2.expressions)


def test_synthesize_repair_retry_on_bad_json():
    t, summary = demo_summary()

    class BadThenGood:
        model_id = "flappy"

        def __init__(self):
            self.mock = MockProvider()
            self.first = True

        def complete(self, prompt):
            if self.first:
                self.first = False
                return "```json not really```"
            # repair prompt carries the note; strip it for the mock
            return self.mock.complete(prompt.split("\n\nREPAIR:")[0])

    audit = AuditLog()
    result = synthesize_features(summary, t.schema, "intervention", BadThenGood(),
                                 audit=audit, sleep=lambda s: None)
    assert result.expressions
    assert any(e["phase"].endswith("-repair") for e in audit.entries)
