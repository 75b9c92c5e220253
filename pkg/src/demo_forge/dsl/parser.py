"""Tokenizer, AST, recursive-descent parser and canonical printer.

The surface is LL(1) apart from one token of lookahead for bindings
(`name = expr` vs a bare name expression). Every AST node carries the
source position it started at, so evaluation errors can point back into
the program text. parse(print(ast)) reproduces the AST exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Union

from ..core import DemoForgeError


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


class DslParseError(DemoForgeError):
    def __init__(self, line: int, col: int, expected: str, found: str):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        super().__init__(f"parse error at {line}:{col}: expected {expected}, found {found}")


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class NumberLit:
    value: Fraction
    span: Span = field(compare=False)


@dataclass(frozen=True)
class TextLit:
    value: str
    span: Span = field(compare=False)


@dataclass(frozen=True)
class Column:
    name: str
    span: Span = field(compare=False)


@dataclass(frozen=True)
class Name:
    ident: str
    span: Span = field(compare=False)


@dataclass(frozen=True)
class Unary:
    op: str  # "-"
    operand: "Expr"
    span: Span = field(compare=False)


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / = != < <= > >= contains
    left: "Expr"
    right: "Expr"
    span: Span = field(compare=False)


@dataclass(frozen=True)
class Call:
    func: str  # count sum min max avg to_number filter concat
    args: tuple["Expr", ...]
    span: Span = field(compare=False)


@dataclass(frozen=True)
class ArgExtreme:
    """argmin/argmax: pick the key cell aligned with the extreme value cell."""

    which: str  # "argmin" | "argmax"
    value: "Expr"
    key: "Expr"
    span: Span = field(compare=False)


Expr = Union[NumberLit, TextLit, Column, Name, Unary, Binary, Call, ArgExtreme]


@dataclass(frozen=True)
class Binding:
    name: str
    expr: Expr
    span: Span = field(compare=False)


@dataclass(frozen=True)
class Program:
    bindings: tuple[Binding, ...]
    final: Expr


SIMPLE_FUNCS = frozenset({"count", "sum", "min", "max", "avg", "to_number", "filter", "concat"})
ARG_FUNCS = frozenset({"argmin", "argmax"})
RESERVED = SIMPLE_FUNCS | ARG_FUNCS | {"w", "contains"}

_FUNC_ARITY = {
    "count": (1, 1),
    "sum": (1, 1),
    "min": (1, 1),
    "max": (1, 1),
    "avg": (1, 1),
    "to_number": (1, 1),
    "filter": (2, 2),
    "concat": (1, None),
}

CMP_OPS = ("!=", "<=", ">=", "=", "<", ">")


# ---------------------------------------------------------------------------
# Tokenizer


@dataclass(frozen=True)
class _Token:
    kind: str  # NUMBER STRING IDENT OP EOF
    text: str
    line: int
    col: int


_PUNCT = ["->", "!=", "<=", ">=", "(", ")", "[", "]", ",", ";", "=", "<", ">", "+", "-", "*", "/"]


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    line = 1
    col = 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "'":
            start_line, start_col = line, col
            j = i + 1
            buf: list[str] = []
            while True:
                if j >= n:
                    raise DslParseError(start_line, start_col, "closing quote", "end of input")
                if source[j] == "\n":
                    raise DslParseError(start_line, start_col, "closing quote", "newline")
                if source[j] == "'":
                    if j + 1 < n and source[j + 1] == "'":  # doubled quote escape
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(source[j])
                j += 1
            tokens.append(_Token("STRING", "".join(buf), start_line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            start_col = col
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot)):
                if source[j] == ".":
                    seen_dot = True
                j += 1
            tokens.append(_Token("NUMBER", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            start_col = col
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(_Token("IDENT", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if source.startswith(p, i):
                tokens.append(_Token("OP", p, line, col))
                col += len(p)
                i += len(p)
                break
        else:
            raise DslParseError(line, col, "a token", repr(ch))
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def fail(self, expected: str) -> DslParseError:
        tok = self.peek()
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        return DslParseError(tok.line, tok.col, expected, found)

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind == "OP" and tok.text == op:
            return self.advance()
        raise self.fail(repr(op))

    def program(self) -> Program:
        statements: list[tuple[str | None, Expr, Span]] = []
        while True:
            statements.append(self.statement())
            tok = self.peek()
            if tok.kind == "OP" and tok.text == ";":
                self.advance()
                if self.peek().kind == "EOF":  # trailing separator
                    break
                continue
            if tok.kind == "EOF":
                break
            raise self.fail("';' or end of program")
        name, final, span = statements[-1]
        if name is not None:
            raise DslParseError(
                span.line, span.col, "a final expression", f"binding {name!r}"
            )
        bindings = []
        seen: set[str] = set()
        for bname, expr, bspan in statements[:-1]:
            if bname is None:
                raise DslParseError(
                    bspan.line, bspan.col, "a binding before the final expression", "expression"
                )
            if bname in seen:
                raise DslParseError(bspan.line, bspan.col, "a fresh binding name", repr(bname))
            seen.add(bname)
            bindings.append(Binding(bname, expr, bspan))
        return Program(tuple(bindings), final)

    def statement(self) -> tuple[str | None, Expr, Span]:
        tok = self.peek()
        if (
            tok.kind == "IDENT"
            and tok.text not in RESERVED
            and self.peek(1).kind == "OP"
            and self.peek(1).text == "="
        ):
            self.advance()
            self.advance()
            expr = self.expression()
            return tok.text, expr, Span(tok.line, tok.col)
        expr = self.expression()
        return None, expr, _span_of(expr)

    def expression(self) -> Expr:
        left = self.additive()
        tok = self.peek()
        if tok.kind == "OP" and tok.text in CMP_OPS:
            self.advance()
            right = self.additive()
            return Binary(tok.text, left, right, _span_of(left))
        if tok.kind == "IDENT" and tok.text == "contains":
            self.advance()
            right = self.additive()
            return Binary("contains", left, right, _span_of(left))
        return left

    def additive(self) -> Expr:
        left = self.term()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text in ("+", "-"):
                self.advance()
                right = self.term()
                left = Binary(tok.text, left, right, _span_of(left))
            else:
                return left

    def term(self) -> Expr:
        left = self.unary()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text in ("*", "/"):
                self.advance()
                right = self.unary()
                left = Binary(tok.text, left, right, _span_of(left))
            else:
                return left

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "OP" and tok.text == "-":
            self.advance()
            operand = self.unary()
            return Unary("-", operand, Span(tok.line, tok.col))
        return self.primary()

    def primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            return NumberLit(Fraction(Decimal(tok.text)), Span(tok.line, tok.col))
        if tok.kind == "STRING":
            self.advance()
            return TextLit(tok.text, Span(tok.line, tok.col))
        if tok.kind == "OP" and tok.text == "(":
            self.advance()
            expr = self.expression()
            self.expect_op(")")
            return expr
        if tok.kind == "IDENT":
            if tok.text == "w":
                self.advance()
                self.expect_op("[")
                name_tok = self.peek()
                if name_tok.kind != "STRING":
                    raise self.fail("a quoted column name")
                self.advance()
                self.expect_op("]")
                return Column(name_tok.text, Span(tok.line, tok.col))
            if tok.text in SIMPLE_FUNCS:
                return self.simple_call()
            if tok.text in ARG_FUNCS:
                return self.arg_call()
            if tok.text == "contains":
                raise self.fail("an expression")
            self.advance()
            return Name(tok.text, Span(tok.line, tok.col))
        raise self.fail("an expression")

    def simple_call(self) -> Expr:
        tok = self.advance()
        self.expect_op("(")
        args: list[Expr] = [self.expression()]
        while self.peek().kind == "OP" and self.peek().text == ",":
            self.advance()
            args.append(self.expression())
        self.expect_op(")")
        lo, hi = _FUNC_ARITY[tok.text]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = str(lo) if lo == hi else f"at least {lo}"
            raise DslParseError(
                tok.line, tok.col, f"{want} argument(s) to {tok.text}", f"{len(args)}"
            )
        return Call(tok.text, tuple(args), Span(tok.line, tok.col))

    def arg_call(self) -> Expr:
        tok = self.advance()
        self.expect_op("(")
        value = self.expression()
        self.expect_op("->")
        key = self.expression()
        self.expect_op(")")
        return ArgExtreme(tok.text, value, key, Span(tok.line, tok.col))


def _span_of(expr: Expr) -> Span:
    return expr.span


def parse_program(source: str) -> Program:
    """Parse DSL source into a Program AST, or raise a positioned DslParseError."""
    return _Parser(_tokenize(source)).program()


# ---------------------------------------------------------------------------
# Canonical printer


def _print_number(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    sign = "-" if value < 0 else ""
    value = abs(value)
    scaled = round(value * 10**6)
    whole, frac = divmod(scaled, 10**6)
    text = f"{whole}.{frac:06d}".rstrip("0").rstrip(".")
    return sign + text


def _quote(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


_PRECEDENCE = {"cmp": 1, "+": 2, "-": 2, "*": 3, "/": 3}


def _op_level(op: str) -> int:
    if op in CMP_OPS or op == "contains":
        return _PRECEDENCE["cmp"]
    return _PRECEDENCE[op]


def _print_expr(expr: Expr, parent_level: int = 0, right_side: bool = False) -> str:
    if isinstance(expr, NumberLit):
        text = _print_number(expr.value)
        return f"({text})" if text.startswith("-") and parent_level > 0 else text
    if isinstance(expr, TextLit):
        return _quote(expr.value)
    if isinstance(expr, Column):
        return f"w[{_quote(expr.name)}]"
    if isinstance(expr, Name):
        return expr.ident
    if isinstance(expr, Unary):
        inner = _print_expr(expr.operand, 4)
        text = f"-{inner}"
        return f"({text})" if parent_level > 0 else text
    if isinstance(expr, Binary):
        level = _op_level(expr.op)
        left = _print_expr(expr.left, level, right_side=False)
        right = _print_expr(expr.right, level, right_side=True)
        text = f"{left} {expr.op} {right}"
        # comparisons do not chain in the grammar, so always parenthesize
        # a comparison nested under another comparison
        needs_parens = level < parent_level or (
            level == parent_level and (right_side or level == _PRECEDENCE["cmp"])
        )
        return f"({text})" if needs_parens else text
    if isinstance(expr, Call):
        args = ", ".join(_print_expr(a) for a in expr.args)
        return f"{expr.func}({args})"
    if isinstance(expr, ArgExtreme):
        return f"{expr.which}({_print_expr(expr.value)} -> {_print_expr(expr.key)})"
    raise TypeError(f"unknown expression node: {expr!r}")


def print_program(program: Program) -> str:
    """Render a Program in canonical text form (parse . print == identity)."""
    parts = [f"{b.name} = {_print_expr(b.expr)}" for b in program.bindings]
    parts.append(_print_expr(program.final))
    return "; ".join(parts)
