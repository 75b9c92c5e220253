"""A minimal deterministic table-program language.

Programs are a sequence of let-bindings followed by a final expression;
values are exact (no binary floats) so evaluation is reproducible
byte-for-byte. The grammar is documented in docs/dsl_grammar.ebnf.
"""
from .parser import (
    ArgExtreme,
    Binary,
    Binding,
    Call,
    Column,
    DslParseError,
    Expr,
    Name,
    NumberLit,
    Program,
    Span,
    TextLit,
    Unary,
    parse_program,
    print_program,
)
from .interp import DslEvalError, EvalErrorKind, eval_program
from .oracle import brute_force_oracle

__all__ = [
    "ArgExtreme",
    "Binary",
    "Binding",
    "Call",
    "Column",
    "DslParseError",
    "DslEvalError",
    "EvalErrorKind",
    "Expr",
    "Name",
    "NumberLit",
    "Program",
    "Span",
    "TextLit",
    "Unary",
    "brute_force_oracle",
    "eval_program",
    "parse_program",
    "print_program",
]
