"""Expression language for predicates and histogram quantities.

Grammar (lowest to highest precedence)::

    expr     := or
    or       := and ( "||" and )*
    and      := cmp ( "&&" cmp )*
    cmp      := sum ( ("<" | "<=" | ">" | ">=" | "==" | "!=") sum )*
    sum      := product ( ("+" | "-") product )*
    product  := unary ( ("*" | "/") unary )*
    unary    := ("-" | "!") unary | primary
    primary  := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"
    FUNC     := "len" | "sum" | "max"
    NUMBER   := ( digits [ "." [digits] ] | "." digits ) [ ("e" | "E") [sign] digits ]
    NAME     := [A-Za-z_][A-Za-z0-9_]*

Binary operators associate to the left. Arithmetic is IEEE-754 double
precision: integer branches are converted to float64, division by zero
gives ``inf``/``nan`` and ``==``/``!=`` compare bit-for-bit values (so
``nan == nan`` is false). Array (VarF32) branches may only appear as the
argument of ``len``, ``sum`` (left-to-right float64 accumulation, 0 for
an empty array) or ``max`` (``-inf`` for an empty array, NaN propagates).

Two evaluators are provided and agree bit-for-bit: :func:`evaluate` works on
one event mapping, :func:`eval_columns` on whole column batches.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import ExprSyntaxError, ExprTypeError, SchemaError

NUM, BOOL, ARRAY = "num", "bool", "array"
FUNCTIONS = ("len", "sum", "max")
COMPARISONS = ("<", "<=", ">", ">=", "==", "!=")
ARITHMETIC = ("+", "-", "*", "/")
PRECEDENCE = {"||": 1, "&&": 2, **{op: 3 for op in COMPARISONS}, "+": 4, "-": 4, "*": 5, "/": 5}
UNARY_PRECEDENCE = 6


@dataclass(frozen=True)
class Literal:
    value: float


@dataclass(frozen=True)
class Field:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: Expr


@dataclass(frozen=True)
class Call:
    func: str
    arg: Expr


@dataclass(frozen=True)
class Binary:
    op: str
    left: Expr
    right: Expr


Expr = Union[Literal, Field, Unary, Call, Binary]

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\|\||&&|<=|>=|==|!=|[-+*/<>!()])
    """,
    re.VERBOSE,
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None:
                self._fail(f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup
            if kind != "ws":
                self.tokens.append((kind, m.group(), pos))
            pos = m.end()
        self.tokens.append(("eof", "", len(text)))
        self.i = 0

    def _fail(self, message: str, char_pos: int):
        raise ExprSyntaxError(message, len(self.text[:char_pos].encode("utf-8")))

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.peek()
        if text != value or kind not in ("op",):
            self._fail(f"expected {value!r}" + (f", found {text!r}" if text else ", found end of input"), pos)
        return self.advance()

    def parse(self) -> Expr:
        expr = self.binary(1)
        kind, text, pos = self.peek()
        if kind != "eof":
            self._fail(f"unexpected {text!r}", pos)
        return expr

    def binary(self, min_prec: int) -> Expr:
        left = self.unary()
        while True:
            kind, op, _ = self.peek()
            prec = PRECEDENCE.get(op) if kind == "op" else None
            if prec is None or prec < min_prec:
                return left
            self.advance()
            left = Binary(op, left, self.binary(prec + 1))

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text in ("-", "!"):
            self.advance()
            return Unary(text, self.unary())
        return self.primary()

    def primary(self) -> Expr:
        kind, text, pos = self.advance()
        if kind == "num":
            return Literal(float(text))
        if kind == "name":
            nkind, ntext, _ = self.peek()
            if nkind == "op" and ntext == "(":
                if text not in FUNCTIONS:
                    self._fail(f"unknown function {text!r}", pos)
                self.advance()
                arg = self.binary(1)
                self.expect(")")
                return Call(text, arg)
            return Field(text)
        if kind == "op" and text == "(":
            inner = self.binary(1)
            self.expect(")")
            return inner
        self._fail("expected expression" + (f", found {text!r}" if text else ", found end of input"), pos)


def parse_expr(text: str) -> Expr:
    """Parse expression text; raises :class:`ExprSyntaxError` with a byte offset."""
    if not isinstance(text, str):
        raise TypeError("expression text must be a str")
    return _Parser(text).parse()


def _format_number(value: float) -> str:
    if math.isinf(value) and value > 0:
        return "1e999"
    if value != value or value < 0 or math.copysign(1.0, value) < 0:
        raise ValueError(f"literal {value!r} has no text form")
    return repr(float(value))


def _prec(expr: Expr) -> int:
    if isinstance(expr, Binary):
        return PRECEDENCE[expr.op]
    if isinstance(expr, Unary):
        return UNARY_PRECEDENCE
    return UNARY_PRECEDENCE + 1


def to_text(expr: Expr, full_parens: bool = False) -> str:
    """Print ``expr`` so that ``parse_expr(to_text(e)) == e``.

    With ``full_parens`` every operator application is parenthesized.
    """
    if isinstance(expr, Literal):
        return _format_number(expr.value)
    if isinstance(expr, Field):
        return expr.name
    if isinstance(expr, Call):
        return f"{expr.func}({to_text(expr.arg, full_parens)})"
    if isinstance(expr, Unary):
        inner = to_text(expr.operand, full_parens)
        if full_parens:
            return f"({expr.op}{inner})"
        if isinstance(expr.operand, Binary):
            inner = f"({inner})"
        elif isinstance(expr.operand, Unary):
            inner = f" {inner}"
        return f"{expr.op}{inner}"
    if isinstance(expr, Binary):
        left = to_text(expr.left, full_parens)
        right = to_text(expr.right, full_parens)
        if full_parens:
            return f"({left} {expr.op} {right})"
        p = PRECEDENCE[expr.op]
        if _prec(expr.left) < p:
            left = f"({left})"
        if _prec(expr.right) <= p:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    raise TypeError(f"not an expression node: {expr!r}")


def fields(expr: Expr | None) -> set[str]:
    """Names of every branch referenced by ``expr``."""
    if expr is None:
        return set()
    if isinstance(expr, Field):
        return {expr.name}
    if isinstance(expr, (Unary, Call)):
        return fields(expr.operand if isinstance(expr, Unary) else expr.arg)
    if isinstance(expr, Binary):
        return fields(expr.left) | fields(expr.right)
    return set()


def infer_type(expr: Expr, types: Mapping) -> str:
    """Type-check ``expr`` against ``{branch name: BranchType}``."""
    if isinstance(expr, Literal):
        return NUM
    if isinstance(expr, Field):
        if expr.name not in types:
            raise SchemaError(f"expression references unknown branch {expr.name!r}")
        return ARRAY if _is_var(types[expr.name]) else NUM
    if isinstance(expr, Call):
        if not isinstance(expr.arg, Field) or infer_type(expr.arg, types) != ARRAY:
            raise ExprTypeError(f"{expr.func}() takes an array branch, got {to_text(expr.arg)!r}")
        return NUM
    if isinstance(expr, Unary):
        t = _operand_type(expr.operand, types)
        want = NUM if expr.op == "-" else BOOL
        if t != want:
            raise ExprTypeError(f"operator {expr.op!r} needs a {want} operand, got {t}")
        return want
    if isinstance(expr, Binary):
        lt, rt = _operand_type(expr.left, types), _operand_type(expr.right, types)
        if expr.op in ARITHMETIC:
            if lt != NUM or rt != NUM:
                raise ExprTypeError(f"operator {expr.op!r} needs numeric operands, got {lt} and {rt}")
            return NUM
        if expr.op in ("&&", "||"):
            if lt != BOOL or rt != BOOL:
                raise ExprTypeError(f"operator {expr.op!r} needs boolean operands, got {lt} and {rt}")
            return BOOL
        if expr.op in ("==", "!=") and lt == rt == BOOL:
            return BOOL
        if lt != NUM or rt != NUM:
            raise ExprTypeError(f"comparison {expr.op!r} needs numeric operands, got {lt} and {rt}")
        return BOOL
    raise TypeError(f"not an expression node: {expr!r}")


def _operand_type(expr: Expr, types: Mapping) -> str:
    t = infer_type(expr, types)
    if t == ARRAY:
        raise ExprTypeError(f"array branch {expr.name!r} can only be used inside len(), sum() or max()")
    return t


def _is_var(branch_type) -> bool:
    return getattr(branch_type, "is_var", False) or branch_type == "VarF32"


def check_predicate(expr: Expr, types: Mapping) -> None:
    t = infer_type(expr, types)
    if t != BOOL:
        raise ExprTypeError(f"predicate {to_text(expr)!r} is {t}-valued, expected bool")


def check_quantity(expr: Expr, types: Mapping) -> None:
    t = infer_type(expr, types)
    if t != NUM:
        raise ExprTypeError(f"quantity {to_text(expr)!r} is {t}-valued, expected a number")


# -- single event -----------------------------------------------------------


def _divide(a: float, b: float) -> float:
    try:
        return a / b
    except ZeroDivisionError:
        if a != a or a == 0.0:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


_SCALAR_OPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _divide,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "&&": lambda a, b: a and b,
    "||": lambda a, b: a or b,
}


def _lookup(row: Mapping, name: str):
    try:
        return row[name]
    except KeyError:
        raise SchemaError(f"event has no field {name!r}") from None


def evaluate(expr: Expr, row: Mapping) -> float | bool:
    """Evaluate ``expr`` on one event given as ``{branch: value or array}``."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Field):
        value = _lookup(row, expr.name)
        if isinstance(value, (bool, np.bool_)):
            return bool(value)
        try:
            return float(value)
        except TypeError:
            raise ExprTypeError(f"field {expr.name!r} is an array; use len(), sum() or max()") from None
    if isinstance(expr, Call):
        if not isinstance(expr.arg, Field):
            raise ExprTypeError(f"{expr.func}() takes an array branch")
        values = np.asarray(_lookup(row, expr.arg.name), dtype=np.float64).reshape(-1)
        if expr.func == "len":
            return float(len(values))
        if expr.func == "sum":
            total = 0.0
            for v in values.tolist():
                total += v
            return total
        return float(np.max(values)) if len(values) else -math.inf
    if isinstance(expr, Unary):
        v = evaluate(expr.operand, row)
        return -v if expr.op == "-" else not v
    if isinstance(expr, Binary):
        return _SCALAR_OPS[expr.op](evaluate(expr.left, row), evaluate(expr.right, row))
    raise TypeError(f"not an expression node: {expr!r}")


# -- column batches ---------------------------------------------------------

_VECTOR_OPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "==": np.equal,
    "!=": np.not_equal,
    "&&": np.logical_and,
    "||": np.logical_or,
}


def _segment_sum(col, n: int) -> np.ndarray:
    lengths = col.lengths()
    rows = np.repeat(np.arange(n), lengths)
    # bincount accumulates in input order, matching the per-event left fold;
    # with no values at all it ignores the weights and returns int64
    out = np.bincount(rows, weights=col.flat_values().astype(np.float64), minlength=n)
    return out.astype(np.float64, copy=False)


def _segment_max(col, n: int) -> np.ndarray:
    lengths = col.lengths()
    out = np.full(n, -np.inf)
    nonempty = lengths > 0
    if nonempty.any():
        values = col.flat_values().astype(np.float64)
        starts = (col.offsets[:-1] - col.offsets[0])[nonempty]
        out[nonempty] = np.maximum.reduceat(values, starts)
    return out


def eval_columns(expr: Expr, columns: Mapping, n: int) -> np.ndarray:
    """Evaluate ``expr`` over ``n`` rows given ``{branch: column}``."""
    with np.errstate(all="ignore"):
        return _eval_columns(expr, columns, n)


def _column(columns: Mapping, name: str):
    try:
        return columns[name]
    except KeyError:
        raise SchemaError(f"batch has no column {name!r}") from None


def _eval_columns(expr: Expr, columns: Mapping, n: int) -> np.ndarray:
    if isinstance(expr, Literal):
        return np.full(n, expr.value)
    if isinstance(expr, Field):
        col = _column(columns, expr.name)
        if hasattr(col, "offsets"):
            raise ExprTypeError(f"field {expr.name!r} is an array; use len(), sum() or max()")
        return np.asarray(col).astype(np.float64, copy=False)
    if isinstance(expr, Call):
        col = _column(columns, expr.arg.name)
        if expr.func == "len":
            return col.lengths().astype(np.float64)
        if expr.func == "sum":
            return _segment_sum(col, n)
        return _segment_max(col, n)
    if isinstance(expr, Unary):
        v = _eval_columns(expr.operand, columns, n)
        return np.negative(v) if expr.op == "-" else np.logical_not(v)
    if isinstance(expr, Binary):
        return _VECTOR_OPS[expr.op](_eval_columns(expr.left, columns, n), _eval_columns(expr.right, columns, n))
    raise TypeError(f"not an expression node: {expr!r}")
