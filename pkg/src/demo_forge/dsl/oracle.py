"""Naive reference interpreter used only as a test oracle.

Deliberately shares no evaluation code with interp.py: its own number
parsing, rendering and comparison logic, written as plain scans. Keep it
dumb; its value is being independently wrong or right.
"""
from __future__ import annotations

from decimal import Decimal
from fractions import Fraction

from ..core import Answer, Table
from .parser import (
    ArgExtreme,
    Binary,
    Call,
    Column,
    Expr,
    Name,
    NumberLit,
    Program,
    TextLit,
    Unary,
)
from .interp import DslEvalError, EvalErrorKind


def _num(cell: str) -> Fraction | None:
    s = cell.strip()
    if s.startswith(("+", "-")):
        body = s[1:]
    else:
        body = s
    if "," in body:
        chunks = body.split(",")
        head, tail = chunks[0], chunks[1:]
        frac = ""
        if tail and "." in tail[-1]:
            tail[-1], _, frac = tail[-1].partition(".")
            frac = "." + frac
        ok = head.isdigit() and 1 <= len(head) <= 3 and all(
            c.isdigit() and len(c) == 3 for c in tail
        )
        if not ok:
            return None
        s = (s[0] if s != body else "") + head + "".join(tail) + frac
        body = head + "".join(tail) + frac
    whole, dot, frac = body.partition(".")
    if dot:
        if not (whole.isdigit() or whole == "") or not (frac.isdigit() or frac == ""):
            return None
        if whole == "" and frac == "":
            return None
    elif not body.isdigit():
        return None
    try:
        return Fraction(Decimal(s))
    except ArithmeticError:
        return None


def _render(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    negative = value < 0
    magnitude = -value if negative else value
    scaled = round(magnitude * 1_000_000)
    digits = str(scaled).rjust(7, "0")
    whole, frac = digits[:-6], digits[-6:]
    while frac.endswith("0"):
        frac = frac[:-1]
    text = whole + ("." + frac if frac else "")
    return "-" + text if negative else text


def _err(kind: EvalErrorKind, node, message: str) -> DslEvalError:
    return DslEvalError(kind, node.span, message)


def _clean(s: str) -> str:
    return s.strip().casefold()


def _cmp(op: str, a: str, b: str) -> bool:
    if op == "contains":
        return _clean(b) in _clean(a)
    an, bn = _num(a), _num(b)
    if an is not None and bn is not None:
        left, right = an, bn
    else:
        left, right = _clean(a), _clean(b)
    if op == "=":
        return left == right
    if op == "!=":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


def _scalar_to_cell(v, node) -> str:
    if isinstance(v, Fraction):
        return _render(v)
    if isinstance(v, str):
        return v
    raise _err(EvalErrorKind.TYPE_MISMATCH, node, "expected a scalar")


def _need_num_cell(cell: str, node) -> Fraction:
    value = _num(cell)
    if value is None:
        raise _err(EvalErrorKind.TYPE_MISMATCH, node, f"cell {cell!r} is not numeric")
    return value


def brute_force_oracle(program: Program, table: Table | None) -> Answer:
    """Reference evaluation; same Answer or same error kind as eval_program."""
    env: dict = {}

    def walk(node: Expr):
        if isinstance(node, NumberLit):
            return node.value
        if isinstance(node, TextLit):
            return node.value
        if isinstance(node, Column):
            if table is None:
                raise _err(EvalErrorKind.MISSING_COLUMN, node, f"no column {node.name!r}")
            found = None
            for position, header in enumerate(table.headers):
                if header == node.name:
                    found = position
                    break
            if found is None:
                raise _err(EvalErrorKind.MISSING_COLUMN, node, f"no column {node.name!r}")
            cells = []
            for row in table.rows:
                cells.append(row[found])
            return tuple(cells)
        if isinstance(node, Name):
            if node.ident not in env:
                raise _err(EvalErrorKind.UNBOUND_NAME, node, f"unbound {node.ident!r}")
            return env[node.ident]
        if isinstance(node, Unary):
            inner = walk(node.operand)
            if not isinstance(inner, Fraction):
                raise _err(EvalErrorKind.TYPE_MISMATCH, node, "negation needs a number")
            return -inner
        if isinstance(node, Binary):
            a = walk(node.left)
            b = walk(node.right)
            if node.op in ("+", "-", "*", "/"):
                if not isinstance(a, Fraction) or not isinstance(b, Fraction):
                    raise _err(EvalErrorKind.TYPE_MISMATCH, node, "arithmetic needs numbers")
                if node.op == "+":
                    return a + b
                if node.op == "-":
                    return a - b
                if node.op == "*":
                    return a * b
                if b == 0:
                    raise _err(EvalErrorKind.DIVISION_BY_ZERO, node, "division by zero")
                return a / b
            a_is_list = isinstance(a, tuple)
            b_is_list = isinstance(b, tuple)
            if not a_is_list and not b_is_list:
                ok = _cmp(node.op, _scalar_to_cell(a, node), _scalar_to_cell(b, node))
                return Fraction(1) if ok else Fraction(0)
            if a_is_list and b_is_list and len(a) != len(b):
                raise _err(EvalErrorKind.TYPE_MISMATCH, node, "list length mismatch")
            size = len(a) if a_is_list else len(b)
            out = []
            for i in range(size):
                lhs = a[i] if a_is_list else _scalar_to_cell(a, node)
                rhs = b[i] if b_is_list else _scalar_to_cell(b, node)
                out.append("1" if _cmp(node.op, lhs, rhs) else "0")
            return tuple(out)
        if isinstance(node, Call):
            values = [walk(a) for a in node.args]
            f = node.func
            if f == "count":
                if not isinstance(values[0], tuple):
                    raise _err(EvalErrorKind.TYPE_MISMATCH, node, "count needs a list")
                return Fraction(len(values[0]))
            if f in ("sum", "avg", "min", "max"):
                cells = values[0]
                if not isinstance(cells, tuple):
                    raise _err(EvalErrorKind.TYPE_MISMATCH, node, f"{f} needs a list")
                if len(cells) == 0:
                    if f == "sum":
                        return Fraction(0)
                    raise _err(EvalErrorKind.EMPTY_AGGREGATE, node, f"{f} of empty list")
                total = Fraction(0)
                best: Fraction | None = None
                for cell in cells:
                    number = _need_num_cell(cell, node)
                    total += number
                    if best is None:
                        best = number
                    elif f == "min" and number < best:
                        best = number
                    elif f == "max" and number > best:
                        best = number
                if f == "sum":
                    return total
                if f == "avg":
                    return total / len(cells)
                assert best is not None
                return best
            if f == "to_number":
                v = values[0]
                if isinstance(v, tuple):
                    out = []
                    for cell in v:
                        out.append(_render(_need_num_cell(cell, node)))
                    return tuple(out)
                if isinstance(v, Fraction):
                    return v
                return _need_num_cell(v, node)
            if f == "filter":
                src, mask = values
                if not isinstance(src, tuple) or not isinstance(mask, tuple):
                    raise _err(EvalErrorKind.TYPE_MISMATCH, node, "filter needs two lists")
                if len(src) != len(mask):
                    raise _err(EvalErrorKind.TYPE_MISMATCH, node, "filter length mismatch")
                kept = []
                for i in range(len(src)):
                    if mask[i] == "1":
                        kept.append(src[i])
                return tuple(kept)
            if f == "concat":
                pieces = []
                for v in values:
                    pieces.append(_scalar_to_cell(v, node))
                return "".join(pieces)
            raise AssertionError(f)
        if isinstance(node, ArgExtreme):
            values = walk(node.value)
            keys = walk(node.key)
            if not isinstance(values, tuple) or not isinstance(keys, tuple):
                raise _err(EvalErrorKind.TYPE_MISMATCH, node, f"{node.which} needs lists")
            if len(values) != len(keys):
                raise _err(EvalErrorKind.TYPE_MISMATCH, node, f"{node.which} length mismatch")
            if len(values) == 0:
                raise _err(EvalErrorKind.EMPTY_AGGREGATE, node, f"{node.which} of empty list")
            best_i = 0
            best_v = _need_num_cell(values[0], node)
            for i in range(1, len(values)):
                candidate = _need_num_cell(values[i], node)
                if node.which == "argmin" and candidate < best_v:
                    best_i, best_v = i, candidate
                if node.which == "argmax" and candidate > best_v:
                    best_i, best_v = i, candidate
            return keys[best_i]
        raise TypeError(f"unknown node {node!r}")

    for binding in program.bindings:
        env[binding.name] = walk(binding.expr)
    result = walk(program.final)
    if isinstance(result, Fraction):
        return Answer(_render(result))
    if isinstance(result, str):
        return Answer(result)
    return Answer("|".join(result))
