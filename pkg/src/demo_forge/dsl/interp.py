"""Evaluator for parsed table programs.

Values are two-sorted: a scalar (exact Fraction number or text) or a
cell list (tuple of text cells, as sliced out of a table column).
Comparisons over cell lists produce "1"/"0" mask lists that feed
``filter``; scalar comparisons produce scalar 1/0. All numerics are
exact rationals, so results are byte-reproducible.
"""
from __future__ import annotations

import re
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Union

from ..core import Answer, DemoForgeError, Table
from .parser import (
    ArgExtreme,
    Binary,
    Call,
    Column,
    Expr,
    Name,
    NumberLit,
    Program,
    Span,
    TextLit,
    Unary,
    _print_number,
)

Value = Union[Fraction, str, tuple]  # tuple of str cells


class EvalErrorKind(str, Enum):
    MISSING_COLUMN = "missing_column"
    TYPE_MISMATCH = "type_mismatch"
    DIVISION_BY_ZERO = "division_by_zero"
    EMPTY_AGGREGATE = "empty_aggregate"
    UNBOUND_NAME = "unbound_name"


class DslEvalError(DemoForgeError):
    def __init__(self, kind: EvalErrorKind, span: Span, message: str):
        self.kind = kind
        self.span = span
        super().__init__(f"{kind.value} at {span}: {message}")


_THOUSANDS_RE = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d*)?$")
_NUMBER_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$")


def _cell_number(cell: str) -> Fraction | None:
    s = cell.strip()
    if _THOUSANDS_RE.match(s):
        s = s.replace(",", "")
    if not _NUMBER_RE.match(s):
        return None
    return Fraction(Decimal(s))


def _norm_text(s: str) -> str:
    return s.strip().casefold()


def _as_number(value: Value, span: Span, what: str) -> Fraction:
    if isinstance(value, Fraction):
        return value
    raise DslEvalError(
        EvalErrorKind.TYPE_MISMATCH, span, f"{what} must be a number, got {_sort_name(value)}"
    )


def _as_list(value: Value, span: Span, what: str) -> tuple:
    if isinstance(value, tuple):
        return value
    raise DslEvalError(
        EvalErrorKind.TYPE_MISMATCH, span, f"{what} must be a cell list, got {_sort_name(value)}"
    )


def _sort_name(value: Value) -> str:
    if isinstance(value, Fraction):
        return "number"
    if isinstance(value, str):
        return "text"
    return "cell list"


def _numeric_cell(cell: str, span: Span) -> Fraction:
    num = _cell_number(cell)
    if num is None:
        raise DslEvalError(
            EvalErrorKind.TYPE_MISMATCH, span, f"cell {cell!r} is not numeric"
        )
    return num


def _scalar_text(value: Value, span: Span) -> str:
    if isinstance(value, Fraction):
        return _print_number(value)
    if isinstance(value, str):
        return value
    raise DslEvalError(EvalErrorKind.TYPE_MISMATCH, span, "expected a scalar, got cell list")


def _compare_cells(op: str, a: str, b: str) -> bool:
    if op == "contains":  # always textual, even for numeric-looking cells
        return _norm_text(b) in _norm_text(a)
    na, nb = _cell_number(a), _cell_number(b)
    if na is not None and nb is not None:
        return _compare_ordered(op, na, nb)
    return _compare_ordered(op, _norm_text(a), _norm_text(b))


def _compare_ordered(op: str, a, b) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise AssertionError(op)


def _to_cell(value: Value, span: Span) -> str:
    return _scalar_text(value, span)


class _Eval:
    def __init__(self, table: Table | None):
        self.table = table
        self.env: dict[str, Value] = {}

    def run(self, program: Program) -> Value:
        for binding in program.bindings:
            self.env[binding.name] = self.eval(binding.expr)
        return self.eval(program.final)

    def eval(self, expr: Expr) -> Value:
        if isinstance(expr, NumberLit):
            return expr.value
        if isinstance(expr, TextLit):
            return expr.value
        if isinstance(expr, Column):
            return self.column(expr)
        if isinstance(expr, Name):
            if expr.ident not in self.env:
                raise DslEvalError(
                    EvalErrorKind.UNBOUND_NAME, expr.span, f"name {expr.ident!r} is not bound"
                )
            return self.env[expr.ident]
        if isinstance(expr, Unary):
            value = _as_number(self.eval(expr.operand), expr.span, "negation operand")
            return -value
        if isinstance(expr, Binary):
            return self.binary(expr)
        if isinstance(expr, Call):
            return self.call(expr)
        if isinstance(expr, ArgExtreme):
            return self.arg_extreme(expr)
        raise TypeError(f"unknown expression node: {expr!r}")

    def column(self, expr: Column) -> tuple:
        if self.table is None or expr.name not in self.table.headers:
            raise DslEvalError(
                EvalErrorKind.MISSING_COLUMN, expr.span, f"no column {expr.name!r}"
            )
        idx = self.table.headers.index(expr.name)
        return tuple(row[idx] for row in self.table.rows)

    def binary(self, expr: Binary) -> Value:
        left = self.eval(expr.left)
        right = self.eval(expr.right)
        if expr.op in ("+", "-", "*", "/"):
            a = _as_number(left, expr.span, f"left operand of {expr.op!r}")
            b = _as_number(right, expr.span, f"right operand of {expr.op!r}")
            if expr.op == "+":
                return a + b
            if expr.op == "-":
                return a - b
            if expr.op == "*":
                return a * b
            if b == 0:
                raise DslEvalError(EvalErrorKind.DIVISION_BY_ZERO, expr.span, "division by zero")
            return a / b
        # comparison / contains
        if isinstance(left, tuple) or isinstance(right, tuple):
            if isinstance(left, tuple) and isinstance(right, tuple):
                if len(left) != len(right):
                    raise DslEvalError(
                        EvalErrorKind.TYPE_MISMATCH,
                        expr.span,
                        f"compared lists have different lengths ({len(left)} vs {len(right)})",
                    )
                pairs = zip(left, right)
            elif isinstance(left, tuple):
                cell = _to_cell(right, expr.span)
                pairs = ((c, cell) for c in left)
            else:
                cell = _to_cell(left, expr.span)
                pairs = ((cell, c) for c in right)
            return tuple("1" if _compare_cells(expr.op, a, b) else "0" for a, b in pairs)
        a_cell = _to_cell(left, expr.span)
        b_cell = _to_cell(right, expr.span)
        return Fraction(1 if _compare_cells(expr.op, a_cell, b_cell) else 0)

    def call(self, expr: Call) -> Value:
        args = [self.eval(a) for a in expr.args]
        func = expr.func
        if func == "count":
            return Fraction(len(_as_list(args[0], expr.span, "count argument")))
        if func in ("sum", "avg", "min", "max"):
            cells = _as_list(args[0], expr.span, f"{func} argument")
            if func == "sum" and not cells:
                return Fraction(0)
            if not cells:
                raise DslEvalError(
                    EvalErrorKind.EMPTY_AGGREGATE, expr.span, f"{func} over an empty list"
                )
            numbers = [_numeric_cell(c, expr.span) for c in cells]
            if func == "sum":
                return sum(numbers, Fraction(0))
            if func == "avg":
                return sum(numbers, Fraction(0)) / len(numbers)
            return min(numbers) if func == "min" else max(numbers)
        if func == "to_number":
            value = args[0]
            if isinstance(value, tuple):
                return tuple(
                    _print_number(_numeric_cell(c, expr.span)) for c in value
                )
            if isinstance(value, Fraction):
                return value
            return _numeric_cell(value, expr.span)
        if func == "filter":
            source = _as_list(args[0], expr.span, "filter source")
            mask = _as_list(args[1], expr.span, "filter mask")
            if len(source) != len(mask):
                raise DslEvalError(
                    EvalErrorKind.TYPE_MISMATCH,
                    expr.span,
                    f"filter mask length {len(mask)} does not match source {len(source)}",
                )
            return tuple(c for c, m in zip(source, mask) if m == "1")
        if func == "concat":
            return "".join(_scalar_text(a, expr.span) for a in args)
        raise AssertionError(func)

    def arg_extreme(self, expr: ArgExtreme) -> Value:
        values = _as_list(self.eval(expr.value), expr.span, f"{expr.which} values")
        keys = _as_list(self.eval(expr.key), expr.span, f"{expr.which} keys")
        if len(values) != len(keys):
            raise DslEvalError(
                EvalErrorKind.TYPE_MISMATCH,
                expr.span,
                f"{expr.which} lists have different lengths ({len(values)} vs {len(keys)})",
            )
        if not values:
            raise DslEvalError(
                EvalErrorKind.EMPTY_AGGREGATE, expr.span, f"{expr.which} over an empty list"
            )
        numbers = [_numeric_cell(c, expr.span) for c in values]
        best = 0
        for i in range(1, len(numbers)):
            if expr.which == "argmin":
                if numbers[i] < numbers[best]:
                    best = i
            else:
                if numbers[i] > numbers[best]:
                    best = i
        return keys[best]


def _to_answer(value: Value) -> Answer:
    if isinstance(value, Fraction):
        return Answer(_print_number(value))
    if isinstance(value, str):
        return Answer(value)
    return Answer("|".join(value))


def eval_program(program: Program, table: Table | None) -> Answer:
    """Evaluate a parsed program against a table; pure and deterministic."""
    return _to_answer(_Eval(table).run(program))
