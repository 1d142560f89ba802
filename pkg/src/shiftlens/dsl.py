"""A tiny total expression language over table rows.

Synthesized features and rule scopes are expressed here instead of host
code: the interpreter is pure (no attribute access, no calls beyond the
three whitelisted functions), every operation is row-local, and every
expression terminates.

Missing-value semantics are strict: if any input of any subexpression is
missing for a row, the row's result is missing. Feature materialization
coerces missing results to 0 alongside an is-missing indicator column.

Grammar (precedence low to high):

    expr    := "if" expr "then" expr "else" expr | or
    or      := and ("or" and)*
    and     := not ("and" not)*
    not     := "not" not | cmp
    cmp     := add (("<"|"<="|">"|">="|"=="|"!=") add)?  | add "in" "{" literals "}"
    add     := mul (("+"|"-") mul)*
    mul     := unary ("*" unary)*
    unary   := "-" unary | atom
    atom    := NUMBER | STRING | COLUMN | fn "(" expr ("," expr)* ")" | "(" expr ")"
    fn      := "safe_div" | "clamp" | "log1p"

safe_div(a, b) yields 0 where b == 0. clamp(x, lo, hi) takes literal
bounds. Category literals are quoted strings; sets hold literals of one
kind. Comparisons never chain.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DslError
from .tabular import Table

__all__ = ["DslExpression", "compile_feature", "compile_predicate", "grammar_description"]

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>'[^']*'|"[^"]*")
  | (?P<op><=|>=|==|!=|<|>|\+|-|\*|\(|\)|\{|\}|,)
    """,
    re.VERBOSE,
)

_KEYWORDS = {"if", "then", "else", "and", "or", "not", "in"}
_FUNCTIONS = {"safe_div": 2, "clamp": 3, "log1p": 1}


@dataclass(frozen=True)
class _Tok:
    kind: str  # number | ident | string | op | keyword | fn | end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    out: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslError(f"unexpected character {text[pos]!r} at position {pos}")
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            if kind == "ident":
                if tok in _KEYWORDS:
                    kind = "keyword"
                elif tok in _FUNCTIONS:
                    kind = "fn"
            out.append(_Tok(kind, tok, pos))
        pos = m.end()
    out.append(_Tok("end", "", len(text)))
    return out


# -- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class _Num:
    value: float


@dataclass(frozen=True)
class _Str:
    value: str


@dataclass(frozen=True)
class _Col:
    name: str


@dataclass(frozen=True)
class _Unary:
    op: str  # "neg" | "not"
    operand: object


@dataclass(frozen=True)
class _Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class _In:
    operand: object
    values: frozenset
    member_type: str  # "num" | "str"


@dataclass(frozen=True)
class _If:
    cond: object
    then: object
    orelse: object


@dataclass(frozen=True)
class _Call:
    fn: str
    args: tuple


class _Parser:
    def __init__(self, tokens: list[_Tok]):
        self.toks = tokens
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        t = self.next()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            raise DslError(f"expected {want!r} at position {t.pos}, found {t.text!r}")
        return t

    def parse(self):
        node = self.expr()
        tail = self.peek()
        if tail.kind != "end":
            raise DslError(f"unexpected trailing input at position {tail.pos}: {tail.text!r}")
        return node

    def expr(self):
        t = self.peek()
        if t.kind == "keyword" and t.text == "if":
            self.next()
            cond = self.expr()
            self.expect("keyword", "then")
            then = self.expr()
            self.expect("keyword", "else")
            orelse = self.expr()
            return _If(cond, then, orelse)
        return self.or_expr()

    def or_expr(self):
        node = self.and_expr()
        while self.peek().kind == "keyword" and self.peek().text == "or":
            self.next()
            node = _Bin("or", node, self.and_expr())
        return node

    def and_expr(self):
        node = self.not_expr()
        while self.peek().kind == "keyword" and self.peek().text == "and":
            self.next()
            node = _Bin("and", node, self.not_expr())
        return node

    def not_expr(self):
        t = self.peek()
        if t.kind == "keyword" and t.text == "not":
            self.next()
            return _Unary("not", self.not_expr())
        return self.cmp_expr()

    def cmp_expr(self):
        node = self.add_expr()
        t = self.peek()
        if t.kind == "op" and t.text in ("<", "<=", ">", ">=", "==", "!="):
            self.next()
            return _Bin(t.text, node, self.add_expr())
        if t.kind == "keyword" and t.text == "in":
            self.next()
            return self.set_tail(node)
        return node

    def set_tail(self, operand):
        self.expect("op", "{")
        values = []
        member_type = None
        while True:
            t = self.next()
            neg = False
            if t.kind == "op" and t.text == "-":
                neg = True
                t = self.next()
            if t.kind == "number":
                v = -float(t.text) if neg else float(t.text)
                this_type = "num"
            elif t.kind == "string" and not neg:
                v = t.text[1:-1]
                this_type = "str"
            else:
                raise DslError(f"set members must be literals (position {t.pos})")
            if member_type is None:
                member_type = this_type
            elif member_type != this_type:
                raise DslError("set members must all be numbers or all be strings")
            values.append(v)
            t = self.next()
            if t.kind == "op" and t.text == ",":
                continue
            if t.kind == "op" and t.text == "}":
                break
            raise DslError(f"expected ',' or '}}' at position {t.pos}")
        return _In(operand, frozenset(values), member_type)

    def add_expr(self):
        node = self.mul_expr()
        while self.peek().kind == "op" and self.peek().text in ("+", "-"):
            op = self.next().text
            node = _Bin(op, node, self.mul_expr())
        return node

    def mul_expr(self):
        node = self.unary_expr()
        while self.peek().kind == "op" and self.peek().text == "*":
            self.next()
            node = _Bin("*", node, self.unary_expr())
        return node

    def unary_expr(self):
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.next()
            return _Unary("neg", self.unary_expr())
        return self.atom()

    def atom(self):
        t = self.next()
        if t.kind == "number":
            return _Num(float(t.text))
        if t.kind == "string":
            return _Str(t.text[1:-1])
        if t.kind == "ident":
            return _Col(t.text)
        if t.kind == "fn":
            self.expect("op", "(")
            args = [self.expr()]
            while self.peek().kind == "op" and self.peek().text == ",":
                self.next()
                args.append(self.expr())
            self.expect("op", ")")
            return _Call(t.text, tuple(args))
        if t.kind == "op" and t.text == "(":
            node = self.expr()
            self.expect("op", ")")
            return node
        if t.kind == "keyword" and t.text == "if":
            self.i -= 1
            return self.expr()
        raise DslError(f"unexpected token {t.text!r} at position {t.pos}")


# -- type checking -----------------------------------------------------------

_DTYPE_TO_TYPE = {"numeric": "num", "boolean": "bool", "categorical": "str", "text": "str"}


def _typecheck(node, col_types: dict[str, str], used: set[str]) -> str:
    if isinstance(node, _Num):
        return "num"
    if isinstance(node, _Str):
        return "str"
    if isinstance(node, _Col):
        if node.name not in col_types:
            raise DslError(f"unknown or disallowed column {node.name!r}")
        used.add(node.name)
        return _DTYPE_TO_TYPE[col_types[node.name]]
    if isinstance(node, _Unary):
        t = _typecheck(node.operand, col_types, used)
        if node.op == "neg":
            if t != "num":
                raise DslError("unary '-' needs a numeric operand")
            return "num"
        if t != "bool":
            raise DslError("'not' needs a boolean operand")
        return "bool"
    if isinstance(node, _Bin):
        lt = _typecheck(node.left, col_types, used)
        rt = _typecheck(node.right, col_types, used)
        if node.op in ("+", "-", "*"):
            if lt != "num" or rt != "num":
                raise DslError(f"'{node.op}' needs numeric operands, got {lt}/{rt}")
            return "num"
        if node.op in ("<", "<=", ">", ">="):
            if lt != "num" or rt != "num":
                raise DslError(f"'{node.op}' compares numbers, got {lt}/{rt}")
            return "bool"
        if node.op in ("==", "!="):
            if lt != rt or lt == "bool":
                raise DslError(f"'{node.op}' needs two numbers or two categories, got {lt}/{rt}")
            return "bool"
        if node.op in ("and", "or"):
            if lt != "bool" or rt != "bool":
                raise DslError(f"'{node.op}' needs boolean operands, got {lt}/{rt}")
            return "bool"
        raise DslError(f"unknown operator {node.op!r}")
    if isinstance(node, _In):
        t = _typecheck(node.operand, col_types, used)
        if t != node.member_type:
            raise DslError(f"'in' mismatch: {t} value against a {node.member_type} set")
        return "bool"
    if isinstance(node, _If):
        ct = _typecheck(node.cond, col_types, used)
        if ct != "bool":
            raise DslError("'if' condition must be boolean")
        tt = _typecheck(node.then, col_types, used)
        et = _typecheck(node.orelse, col_types, used)
        if tt != et:
            raise DslError(f"'then'/'else' branches disagree: {tt} vs {et}")
        return tt
    if isinstance(node, _Call):
        arity = _FUNCTIONS[node.fn]
        if len(node.args) != arity:
            raise DslError(f"{node.fn} takes {arity} arguments, got {len(node.args)}")
        for a in node.args:
            if _typecheck(a, col_types, used) != "num":
                raise DslError(f"{node.fn} needs numeric arguments")
        if node.fn == "clamp":
            lo, hi = node.args[1], node.args[2]
            lo_v = _literal_value(lo)
            hi_v = _literal_value(hi)
            if lo_v is None or hi_v is None:
                raise DslError("clamp bounds must be numeric literals")
            if lo_v > hi_v:
                raise DslError("clamp lower bound exceeds upper bound")
        return "num"
    raise DslError(f"unexpected node {node!r}")


def _literal_value(node) -> float | None:
    if isinstance(node, _Num):
        return node.value
    if isinstance(node, _Unary) and node.op == "neg":
        inner = _literal_value(node.operand)
        return None if inner is None else -inner
    return None


# -- evaluation ---------------------------------------------------------------

def _eval(node, table: Table, n: int):
    """Returns (values, missing). values: float64 / bool / object array."""
    if isinstance(node, _Num):
        return np.full(n, node.value, dtype=np.float64), np.zeros(n, dtype=bool)
    if isinstance(node, _Str):
        return np.full(n, node.value, dtype=object), np.zeros(n, dtype=bool)
    if isinstance(node, _Col):
        sch = table.column_schema(node.name)
        col = table.column(node.name)
        if sch.dtype == "numeric":
            miss = np.isnan(col)
            return np.where(miss, 0.0, col), miss
        if sch.dtype == "boolean":
            miss = np.isnan(col)
            return np.nan_to_num(col) == 1.0, miss
        miss = np.array([v is None for v in col], dtype=bool)
        return col, miss
    if isinstance(node, _Unary):
        v, m = _eval(node.operand, table, n)
        if node.op == "neg":
            return -v, m
        return ~v, m
    if isinstance(node, _Bin):
        lv, lm = _eval(node.left, table, n)
        rv, rm = _eval(node.right, table, n)
        miss = lm | rm
        op = node.op
        if op in ("+", "-", "*"):
            with np.errstate(over="ignore", invalid="ignore"):
                out = lv + rv if op == "+" else lv - rv if op == "-" else lv * rv
            bad = ~np.isfinite(out)
            return np.where(bad, 0.0, out), miss | bad
        if op in ("<", "<=", ">", ">="):
            cmps = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal}
            return cmps[op](lv, rv), miss
        if op in ("==", "!="):
            if lv.dtype == object or rv.dtype == object:
                eq = np.array([a == b for a, b in zip(lv, rv)], dtype=bool)
            else:
                eq = lv == rv
            return (eq if op == "==" else ~eq), miss
        if op == "and":
            return lv & rv, miss
        return lv | rv, miss
    if isinstance(node, _In):
        v, m = _eval(node.operand, table, n)
        if node.member_type == "str":
            hit = np.array([x in node.values for x in v], dtype=bool)
        else:
            hit = np.isin(v, sorted(node.values))
        return hit, m
    if isinstance(node, _If):
        cv, cm = _eval(node.cond, table, n)
        tv, tm = _eval(node.then, table, n)
        ev, em = _eval(node.orelse, table, n)
        miss = cm | tm | em
        if tv.dtype == object or ev.dtype == object:
            out = np.where(cv, tv, ev)
            out = out.astype(object)
        else:
            out = np.where(cv, tv, ev)
        return out, miss
    if isinstance(node, _Call):
        args = [_eval(a, table, n) for a in node.args]
        miss = args[0][1].copy()
        for _, m in args[1:]:
            miss |= m
        if node.fn == "safe_div":
            num, den = args[0][0], args[1][0]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                out = np.where(den == 0.0, 0.0, num / den)
            bad = ~np.isfinite(out)
            return np.where(bad, 0.0, out), miss | bad
        if node.fn == "clamp":
            lo = _literal_value(node.args[1])
            hi = _literal_value(node.args[2])
            return np.clip(args[0][0], lo, hi), miss
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.log1p(args[0][0])
        bad = ~np.isfinite(out)
        return np.where(bad, 0.0, out), miss | bad
    raise DslError(f"unexpected node {node!r}")


@dataclass(frozen=True)
class DslExpression:
    """A parsed, type-checked expression bound to a column-type context."""

    text: str
    result_type: str  # "num" | "bool"
    columns: frozenset[str]
    _ast: object
    _col_types: dict

    def evaluate(self, table: Table) -> tuple[np.ndarray, np.ndarray]:
        """Numeric materialization: (float64 values, missing mask).

        Boolean results coerce to 1.0/0.0; missing rows carry value 0.
        """
        vals, miss = _eval(self._ast, table, table.n_rows)
        if self.result_type == "bool":
            vals = vals.astype(np.float64)
        out = np.where(miss, 0.0, vals.astype(np.float64))
        return out, miss

    def predicate_mask(self, table: Table) -> np.ndarray:
        """Boolean mask; rows with missing inputs never match."""
        if self.result_type != "bool":
            raise DslError("predicate_mask requires a boolean expression")
        vals, miss = _eval(self._ast, table, table.n_rows)
        return np.asarray(vals, dtype=bool) & ~miss


def _compile(text: str, col_types: dict[str, str], want: str) -> DslExpression:
    if not isinstance(text, str) or not text.strip():
        raise DslError("empty expression")
    for name, dtype in col_types.items():
        if dtype not in _DTYPE_TO_TYPE:
            raise DslError(f"column {name!r} has unsupported dtype {dtype!r}")
    ast = _Parser(_tokenize(text)).parse()
    used: set[str] = set()
    rtype = _typecheck(ast, col_types, used)
    if want == "predicate":
        if rtype != "bool":
            raise DslError(f"predicate must be boolean, got {rtype}")
    else:
        if rtype == "str":
            raise DslError("feature expressions must produce a number or a boolean")
    return DslExpression(
        text=text, result_type=rtype, columns=frozenset(used), _ast=ast, _col_types=dict(col_types)
    )


def compile_feature(text: str, col_types: dict[str, str]) -> DslExpression:
    """Parse and type-check a feature expression (numeric or boolean result)."""
    return _compile(text, col_types, "feature")


def compile_predicate(text: str, col_types: dict[str, str]) -> DslExpression:
    """Parse and type-check a row predicate (boolean result required)."""
    return _compile(text, col_types, "predicate")


def grammar_description() -> str:
    """Human/prompt-oriented summary of the expression language."""
    return (
        "Expressions operate on one row at a time. Available pieces:\n"
        "- column names exactly as given in the schema\n"
        "- numeric literals (1, 2.5, 1e3) and quoted category literals ('Medicare')\n"
        "- arithmetic: a + b, a - b, a * b, safe_div(a, b) (yields 0 when b is 0)\n"
        "- comparisons: < <= > >= == != (numbers; == and != also compare categories)\n"
        "- boolean logic: and, or, not\n"
        "- conditional: if <bool> then <expr> else <expr>\n"
        "- set membership: COLUMN in {'a', 'b'} or COLUMN in {1, 2}\n"
        "- clamp(x, lo, hi) with literal bounds, log1p(x)\n"
        "No other functions, no chained comparisons, no division operator.\n"
        "A feature expression must produce a number (booleans count as 0/1)."
    )
