"""Completion-provider feature synthesis in two phases.

Phase one sends the aggregate insight summary plus column names/dtypes
and asks for feature definitions (name, source columns, prose logic).
Phase two sends the validated definitions plus the expression grammar
and asks for one expression per feature. Both phases demand strict JSON
and get exactly one format-repair retry. Dataset content never reaches
the provider except through the insight summary, which is built from
suppressed, aggregate-only slices upstream.

Providers: a deterministic mock (canned responses keyed by prompt hash,
with a prompt-derived generator fallback so self-contained runs work
out of the box) and a chat-completions HTTP client. Every request and
response lands in a JSONL audit trail.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field

from .dsl import DslExpression, compile_feature, grammar_description
from .errors import ProviderError, SynthesisError, ValidationError
from .stats import InsightSummary
from .tabular import ColumnSchema

__all__ = [
    "MAX_FEATURES",
    "FeatureDefinition",
    "ProviderResponse",
    "MockProvider",
    "HttpChatProvider",
    "provider_from_env",
    "build_definition_prompt",
    "build_expression_prompt",
    "call_provider",
    "parse_validate_definitions",
    "compile_expression",
    "SynthesisResult",
    "synthesize_features",
]

MAX_FEATURES = 12
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

INSIGHTS_BEGIN = "BEGIN_INSIGHTS_JSON"
INSIGHTS_END = "END_INSIGHTS_JSON"
SCHEMA_BEGIN = "BEGIN_SCHEMA_JSON"
SCHEMA_END = "END_SCHEMA_JSON"
DEFS_BEGIN = "BEGIN_DEFINITIONS_JSON"
DEFS_END = "END_DEFINITIONS_JSON"

_TASK_FRAMING = {
    "intervention": (
        "Task focus: INTERVENTION MEMBERSHIP. Propose engineered features that "
        "help a classifier recognize rows whose target metric was changed by a "
        "deliberate, systematic intervention concentrated in a population segment."
    ),
    "noise": (
        "Task focus: DATA-QUALITY NOISE. Propose engineered features that help a "
        "classifier recognize rows corrupted by data-quality problems such as "
        "duplicated records, implausible value multiples, new missing values, "
        "suspicious round numbers, zeroed values, or unknown category labels."
    ),
}


@dataclass
class FeatureDefinition:
    name: str
    source_columns: list[str]
    logic_description: str
    expression: str | None = None
    status: str = "proposed"  # proposed | validated | expression_ready | failed

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source_columns": list(self.source_columns),
            "logic_description": self.logic_description,
            "expression": self.expression,
            "status": self.status,
        }


@dataclass(frozen=True)
class ProviderResponse:
    raw_text: str
    payload: object  # parsed JSON, or None when parsing failed
    model_id: str
    temperature: float = 0.0


# -- prompt construction -------------------------------------------------------

def build_definition_prompt(summary: InsightSummary, schema_context: list[dict], task: str) -> str:
    if task not in _TASK_FRAMING:
        raise ValidationError(f"task must be 'intervention' or 'noise', got {task!r}")
    if not summary.insights:
        raise ValidationError("insight summary is empty")
    lines = [
        "You design features for a tabular-data classifier.",
        "",
        _TASK_FRAMING[task],
        "",
        "Available columns (name and dtype). Use only these as source columns:",
        SCHEMA_BEGIN,
        json.dumps(schema_context, sort_keys=True, indent=2),
        SCHEMA_END,
        "",
        "Aggregate statistical insights about where the target concentrates",
        "(slice definitions, rates, association scores; no raw records):",
        INSIGHTS_BEGIN,
        summary.to_json(),
        INSIGHTS_END,
        "",
        f"Propose at most {MAX_FEATURES} features.",
        "Respond with STRICT JSON only, no prose, in exactly this shape:",
        '{"features": [{"name": "identifier", "source_columns": ["COL"],',
        ' "logic_description": "what the feature computes and why"}]}',
    ]
    return "\n".join(lines)


def build_expression_prompt(defs: list[FeatureDefinition]) -> str:
    if not defs:
        raise ValidationError("no definitions to request expressions for")
    if any(d.status != "validated" for d in defs):
        raise ValidationError("all definitions must be validated first")
    payload = [
        {"name": d.name, "source_columns": d.source_columns, "logic_description": d.logic_description}
        for d in defs
    ]
    cols = sorted({c for d in defs for c in d.source_columns})
    lines = [
        "Write one expression per feature definition below, in the expression",
        "language described after the definitions.",
        "",
        DEFS_BEGIN,
        json.dumps(payload, sort_keys=True, indent=2),
        DEFS_END,
        "",
        "Each expression may reference only that feature's source columns.",
        "Columns referenced across all definitions: " + ", ".join(cols),
        "",
        grammar_description(),
        "",
        f"Respond with STRICT JSON only, no prose: {{\"features\": [{{\"name\":",
        ' "same name as the definition", "expression": "expression text"}]}',
    ]
    return "\n".join(lines)


_REPAIR_NOTE = (
    "\n\nREPAIR: your previous reply was not valid JSON in the requested shape. "
    "Reply again with STRICT JSON only. No markdown fences, no commentary."
)


# -- providers -----------------------------------------------------------------

def _prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockProvider:
    """Deterministic stand-in: canned responses keyed by prompt sha256,
    falling back to a generator that derives plausible JSON from the
    prompt's embedded documents. Never touches the network.
    """

    model_id = "mock-deterministic"

    def __init__(self, canned: dict[str, str] | None = None, generate: bool = True):
        self.canned = dict(canned or {})
        self.generate = generate
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        key = _prompt_key(prompt)
        if key in self.canned:
            return self.canned[key]
        if not self.generate:
            raise ProviderError(f"mock provider has no canned response for prompt {key[:12]}")
        if DEFS_BEGIN in prompt:
            return self._generate_expressions(prompt)
        if INSIGHTS_BEGIN in prompt:
            return self._generate_definitions(prompt)
        raise ProviderError("mock provider cannot classify prompt phase")

    @staticmethod
    def _extract(prompt: str, begin: str, end: str) -> object:
        try:
            blob = prompt.split(begin, 1)[1].split(end, 1)[0]
            return json.loads(blob)
        except (IndexError, json.JSONDecodeError) as exc:
            raise ProviderError(f"mock provider could not parse embedded {begin} block") from exc

    def _generate_definitions(self, prompt: str) -> str:
        summary = self._extract(prompt, INSIGHTS_BEGIN, INSIGHTS_END)
        schema = self._extract(prompt, SCHEMA_BEGIN, SCHEMA_END)
        dtypes = {c["name"]: c["dtype"] for c in schema}
        feats = []
        seen = set()
        for ins in summary.get("insights", []):
            col = ins.get("column")
            if col not in dtypes:
                continue
            recipe = self._slice_recipe(ins, dtypes[col])
            if recipe is None:
                continue
            name = f"flag_{col.lower()}_{len(feats)}"
            if name in seen:
                continue
            seen.add(name)
            feats.append({
                "name": name,
                "source_columns": [col],
                "logic_description": f"Membership indicator for the slice "
                                     f"{ins.get('kind')} on {col}. recipe: {recipe}",
            })
            if len(feats) >= MAX_FEATURES - 1:
                break
        num_cols = sorted(
            {ins.get("column") for ins in summary.get("insights", [])
             if dtypes.get(ins.get("column")) == "numeric"}
        )
        if len(num_cols) >= 2 and len(feats) < MAX_FEATURES:
            a, b = num_cols[0], num_cols[1]
            feats.append({
                "name": f"ratio_{a.lower()}_{b.lower()}",
                "source_columns": [a, b],
                "logic_description": f"Ratio of {a} to {b}. recipe: safe_div({a}, {b})",
            })
        return json.dumps({"features": feats}, sort_keys=True)

    @staticmethod
    def _slice_recipe(ins: dict, dtype: str) -> str | None:
        col = ins["column"]
        if ins.get("kind") == "eq":
            cat = ins.get("category")
            if cat is None:
                return None
            if dtype == "boolean":
                return f"if {col} then 1 else 0" if cat == "true" else f"if not {col} then 1 else 0"
            safe = str(cat).replace("'", "")
            return f"if {col} == '{safe}' then 1 else 0"
        if ins.get("kind") == "bin" and dtype == "numeric":
            lo, hi = ins.get("lo"), ins.get("hi")
            if lo is None or hi is None:
                return None
            if lo == hi:
                return f"if {col} == {lo!r} then 1 else 0"
            upper = "<=" if ins.get("closed_right") else "<"
            return f"if {col} >= {lo!r} and {col} {upper} {hi!r} then 1 else 0"
        return None

    def _generate_expressions(self, prompt: str) -> str:
        defs = self._extract(prompt, DEFS_BEGIN, DEFS_END)
        out = []
        for d in defs:
            text = d.get("logic_description", "")
            if "recipe: " in text:
                expr = text.split("recipe: ", 1)[1].strip()
            else:
                expr = d["source_columns"][0]
            out.append({"name": d["name"], "expression": expr})
        return json.dumps({"features": out}, sort_keys=True)


class HttpChatProvider:
    """Minimal chat-completions client; temperature pinned to 0."""

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0):
        if not endpoint or not model:
            raise ValidationError("HTTP provider needs endpoint and model")
        self.endpoint = endpoint
        self.model_id = model
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model_id,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except Exception as exc:
            raise ProviderError(f"provider request failed: {exc}") from exc


def provider_from_env():
    """Build the live provider from SHIFTLENS_LLM_ENDPOINT/_MODEL/_API_KEY."""
    endpoint = os.environ.get("SHIFTLENS_LLM_ENDPOINT", "")
    model = os.environ.get("SHIFTLENS_LLM_MODEL", "")
    key = os.environ.get("SHIFTLENS_LLM_API_KEY")
    if not endpoint or not model:
        raise ValidationError(
            "live provider requires SHIFTLENS_LLM_ENDPOINT and SHIFTLENS_LLM_MODEL"
        )
    return HttpChatProvider(endpoint, model, key)


# -- transport + audit ---------------------------------------------------------

class AuditLog:
    """Append-only JSONL record of every provider exchange.

    Entries are ordered by call index, not wall-clock time, so reruns
    with the mock provider produce byte-identical logs.
    """

    def __init__(self, path=None):
        self.path = path
        self.entries: list[dict] = []

    def record(self, **entry) -> None:
        entry["call_index"] = len(self.entries)
        self.entries.append(entry)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


def call_provider(provider, prompt: str, audit: AuditLog, phase: str,
                  max_retries: int = 3, backoff_base: float = 0.5,
                  sleep=None) -> ProviderResponse:
    """One provider exchange with exponential backoff on transport errors.

    The response is parsed as strict JSON; parse failure is reported via
    payload=None with the raw text kept (and audited) for the caller's
    repair retry.
    """
    import time as _time

    sleep = _time.sleep if sleep is None else sleep
    last_error = None
    for attempt in range(max_retries + 1):
        try:
            raw = provider.complete(prompt)
        except ProviderError as exc:
            last_error = exc
            audit.record(phase=phase, prompt_sha256=_prompt_key(prompt), prompt=prompt,
                         attempt=attempt, ok=False, error=str(exc),
                         model_id=getattr(provider, "model_id", "unknown"))
            if attempt < max_retries:
                sleep(backoff_base * (2 ** attempt))
            continue
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            payload = None
            parse_error = str(exc)
        else:
            parse_error = None
        audit.record(phase=phase, prompt_sha256=_prompt_key(prompt), prompt=prompt,
                     attempt=attempt, ok=True, response=raw, parse_error=parse_error,
                     model_id=getattr(provider, "model_id", "unknown"))
        return ProviderResponse(
            raw_text=raw, payload=payload,
            model_id=getattr(provider, "model_id", "unknown"), temperature=0.0,
        )
    raise ProviderError(f"provider failed after {max_retries + 1} attempts: {last_error}")


# -- validation + compilation --------------------------------------------------

def parse_validate_definitions(resp: ProviderResponse, allowed_columns: list[str],
                               reserved_names: set | None = None) -> list[FeatureDefinition]:
    """Keep well-formed definitions over allowed columns; drop the rest.

    Dropping is silent per definition (recorded by the caller); an empty
    surviving list is an error.
    """
    if not isinstance(resp.payload, dict) or not isinstance(resp.payload.get("features"), list):
        raise SynthesisError("definition response is not a JSON object with a 'features' list")
    allowed = set(allowed_columns)
    reserved = set(reserved_names or ())
    out: list[FeatureDefinition] = []
    seen = set()
    for item in resp.payload["features"]:
        if not isinstance(item, dict):
            continue
        name = item.get("name")
        cols = item.get("source_columns")
        logic = item.get("logic_description")
        if not (isinstance(name, str) and _NAME_RE.match(name)):
            continue
        if name in seen or name in reserved or name in allowed:
            continue
        if not (isinstance(cols, list) and cols and all(isinstance(c, str) for c in cols)):
            continue
        if not set(cols) <= allowed:
            continue
        if not isinstance(logic, str) or not logic:
            continue
        seen.add(name)
        out.append(FeatureDefinition(name, list(cols), logic, status="validated"))
        if len(out) >= MAX_FEATURES:
            break
    if not out:
        raise SynthesisError("no valid feature definitions survived validation")
    return out


def compile_expression(definition: FeatureDefinition, expr_text: str,
                       schema: list[ColumnSchema]) -> DslExpression:
    """Parse and type-check against the definition's own source columns."""
    allowed = set(definition.source_columns)
    col_types = {c.name: c.dtype for c in schema if c.name in allowed}
    return compile_feature(expr_text, col_types)


@dataclass
class SynthesisResult:
    task: str
    definitions: list[FeatureDefinition]
    expressions: dict[str, DslExpression]
    audit: AuditLog = field(repr=False)

    def ready_names(self) -> list[str]:
        return [d.name for d in self.definitions if d.status == "expression_ready"]


def _call_json(provider, prompt, audit, phase, max_retries, sleep) -> ProviderResponse:
    resp = call_provider(provider, prompt, audit, phase, max_retries=max_retries, sleep=sleep)
    if resp.payload is None:
        resp = call_provider(provider, prompt + _REPAIR_NOTE, audit, phase + "-repair",
                             max_retries=max_retries, sleep=sleep)
        if resp.payload is None:
            raise SynthesisError(f"{phase}: response was not valid JSON after repair retry")
    return resp


def synthesize_features(
    summary: InsightSummary,
    schema: list[ColumnSchema],
    task: str,
    provider,
    audit: AuditLog | None = None,
    max_retries: int = 3,
    sleep=None,
) -> SynthesisResult:
    """Run both phases for one task (intervention or noise) and return
    compiled, materialization-ready expressions keyed by feature name.
    """
    audit = audit or AuditLog()
    allowed_cols = [
        c.name for c in schema
        if c.role in ("feature", "quasi-identifier")
    ]
    schema_context = [
        {"name": c.name, "dtype": c.dtype}
        for c in schema if c.name in set(allowed_cols)
    ]

    def_prompt = build_definition_prompt(summary, schema_context, task)
    def_resp = _call_json(provider, def_prompt, audit, f"{task}-definitions", max_retries, sleep)
    definitions = parse_validate_definitions(
        def_resp, allowed_cols, reserved_names={c.name for c in schema}
    )

    expr_prompt = build_expression_prompt(definitions)
    expr_resp = _call_json(provider, expr_prompt, audit, f"{task}-expressions", max_retries, sleep)
    if not isinstance(expr_resp.payload, dict) or not isinstance(expr_resp.payload.get("features"), list):
        raise SynthesisError("expression response is not a JSON object with a 'features' list")
    expr_by_name = {}
    for item in expr_resp.payload["features"]:
        if isinstance(item, dict) and isinstance(item.get("name"), str) \
                and isinstance(item.get("expression"), str):
            expr_by_name.setdefault(item["name"], item["expression"])

    expressions: dict[str, DslExpression] = {}
    for definition in definitions:
        text = expr_by_name.get(definition.name)
        if text is None:
            definition.status = "failed"
            continue
        try:
            compiled = compile_expression(definition, text, schema)
        except ValidationError as exc:
            definition.status = "failed"
            audit.record(phase=f"{task}-compile", feature=definition.name, ok=False,
                         error=str(exc), expression=text)
            continue
        definition.expression = text
        definition.status = "expression_ready"
        expressions[definition.name] = compiled
    if not expressions:
        raise SynthesisError(f"{task}: every proposed feature failed expression compilation")
    return SynthesisResult(task=task, definitions=definitions, expressions=expressions, audit=audit)
