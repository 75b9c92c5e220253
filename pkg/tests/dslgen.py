"""Random table-program generator for DSL fuzz oracles.

Builds well-formed ASTs (so everything parses) over a random table
schema; evaluation may still fail, which is intentional: the oracle
equivalence covers error kinds too.
"""
from __future__ import annotations

import random
from fractions import Fraction

from demo_forge.core import Table
from demo_forge.dsl.parser import (
    ArgExtreme,
    Binary,
    Binding,
    Call,
    Column,
    Name,
    NumberLit,
    Program,
    Span,
    TextLit,
    Unary,
)

_SPAN = Span(1, 1)
_WORDS = ["gold", "silver", "bronze", "Friday", "Monday", "total", "n/a", "", "Ore 2"]
_CMP = ["=", "!=", "<", "<=", ">", ">=", "contains"]


def random_table(rng: random.Random) -> Table:
    n_cols = rng.randint(1, 6)
    n_rows = rng.randint(0, 8)
    headers = [f"C{i}" for i in range(n_cols)]
    numeric_cols = {i for i in range(n_cols) if rng.random() < 0.6}

    def cell(col: int) -> str:
        if col in numeric_cols and rng.random() < 0.9:
            kind = rng.random()
            if kind < 0.5:
                return str(rng.randint(-999, 9999))
            if kind < 0.75:
                return f"{rng.uniform(-50, 50):.{rng.randint(1, 3)}f}"
            return f"{rng.randint(1, 999)},{rng.randint(0, 999):03d}"
        return rng.choice(_WORDS)

    rows = [[cell(c) for c in range(n_cols)] for _ in range(n_rows)]
    title = "Fuzz" if rng.random() < 0.5 else None
    return Table.make(headers, rows, title=title)


class ProgramGen:
    def __init__(self, rng: random.Random, table: Table):
        self.rng = rng
        self.table = table
        self.bound: list[str] = []

    def column(self) -> Column:
        # occasionally reference a missing column to exercise that error kind
        if self.rng.random() < 0.08:
            return Column("Nope", _SPAN)
        return Column(self.rng.choice(list(self.table.headers)), _SPAN)

    def number(self) -> NumberLit:
        if self.rng.random() < 0.3:
            return NumberLit(Fraction(self.rng.randint(0, 50)), _SPAN)
        return NumberLit(Fraction(self.rng.randint(0, 5000), 100), _SPAN)

    def text(self) -> TextLit:
        return TextLit(self.rng.choice(_WORDS), _SPAN)

    def list_expr(self, depth: int):
        roll = self.rng.random()
        if depth <= 0 or roll < 0.45:
            return self.column()
        if roll < 0.65:
            return Call("filter", (self.list_expr(depth - 1), self.mask(depth - 1)), _SPAN)
        if roll < 0.8:
            return Call("to_number", (self.list_expr(depth - 1),), _SPAN)
        return self.mask(depth - 1)

    def mask(self, depth: int):
        left = self.list_expr(max(depth - 1, 0))
        if self.rng.random() < 0.5:
            right = self.scalar(0)
        else:
            right = self.list_expr(max(depth - 1, 0))
        return Binary(self.rng.choice(_CMP), left, right, _SPAN)

    def scalar(self, depth: int):
        roll = self.rng.random()
        if depth <= 0:
            return self.number() if roll < 0.6 else self.text()
        if roll < 0.2:
            return self.number()
        if roll < 0.3:
            return self.text()
        if roll < 0.35 and self.bound:
            return Name(self.rng.choice(self.bound), _SPAN)
        if roll < 0.6:
            func = self.rng.choice(["count", "sum", "min", "max", "avg"])
            return Call(func, (self.list_expr(depth - 1),), _SPAN)
        if roll < 0.7:
            which = self.rng.choice(["argmin", "argmax"])
            return ArgExtreme(which, self.list_expr(depth - 1), self.list_expr(depth - 1), _SPAN)
        if roll < 0.85:
            op = self.rng.choice(["+", "-", "*", "/"])
            return Binary(op, self.scalar(depth - 1), self.scalar(depth - 1), _SPAN)
        if roll < 0.92:
            op = self.rng.choice(_CMP)
            return Binary(op, self.scalar(depth - 1), self.scalar(depth - 1), _SPAN)
        if roll < 0.96:
            args = tuple(self.scalar(depth - 1) for _ in range(self.rng.randint(1, 3)))
            return Call("concat", args, _SPAN)
        return Unary("-", self.scalar(depth - 1), _SPAN)

    def program(self) -> Program:
        bindings = []
        for i in range(self.rng.randint(0, 3)):
            name = f"v{i}"
            expr = self.scalar(2) if self.rng.random() < 0.7 else self.list_expr(2)
            bindings.append(Binding(name, expr, _SPAN))
            self.bound.append(name)
        final = self.scalar(2) if self.rng.random() < 0.75 else self.list_expr(2)
        return Program(tuple(bindings), final)


def random_instance(rng: random.Random) -> tuple[Program, Table]:
    table = random_table(rng)
    return ProgramGen(rng, table).program(), table
