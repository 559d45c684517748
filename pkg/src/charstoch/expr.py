"""Closed-form scalar expressions over a small variable alphabet.

Problem data (velocity components, initial profiles, optional analytic
derivatives) arrives as strings like ``"u"``, ``"sin(x1 - 2.0)"`` or
``"exp(-x1^2 - x2^2)"``.  This module turns them into small immutable
trees and evaluates those trees on floats or numpy arrays.

Grammar, tightest first: ``^`` (right associative), unary minus,
``*`` ``/``, ``+`` ``-``.  So ``-x1^2`` is ``-(x1^2)`` and ``2^3^2``
is ``2^(3^2)``.  Functions are unary: sin, cos, exp, log, tanh, sqrt,
abs.

Evaluation is plain IEEE double precision, but domain violations
(log of a nonpositive value, division by zero, sqrt of a negative,
fractional powers of negatives) raise :class:`EvalDomainError` instead
of silently producing NaN.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArityMismatch,
    EvalDomainError,
    ExprSyntaxError,
    IllegalCharacter,
    UnknownFunction,
    UnknownVariable,
)

__all__ = [
    "Token",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "FUNCTIONS",
    "tokenize",
    "parse_expr",
    "parse",
    "eval_expr",
    "expr_to_str",
    "variables",
    "numeric_partial",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "tanh", "sqrt", "abs")

_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


@dataclass(frozen=True)
class Token:
    kind: str  # "number" | "ident" | "op" | "lparen" | "rparen" | "comma"
    text: str
    pos: int   # byte offset into the source string


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # "+", "-", "*", "/", "^"
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Const | Var | Neg | BinOp | Call


def tokenize(source: str) -> list[Token]:
    """Split source text into tokens, tracking byte offsets.

    Raises IllegalCharacter (with the offending offset) on anything
    outside numbers, identifiers, operators, parentheses, commas and
    whitespace.
    """
    tokens: list[Token] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            m = _NUMBER_RE.match(source, i)
            if m is None:
                raise IllegalCharacter(f"malformed number near {source[i:i+8]!r}", i)
            end = m.end()
            if end < n and (source[end] == "." or source[end].isdigit()):
                raise IllegalCharacter(
                    f"malformed number near {source[i:end + 1]!r}", end)
            tokens.append(Token("number", m.group(), i))
            i = end
            continue
        if ch.isalpha() or ch == "_":
            m = _IDENT_RE.match(source, i)
            tokens.append(Token("ident", m.group(), i))
            i = m.end()
            continue
        if ch in "+-*/^":
            tokens.append(Token("op", ch, i))
        elif ch == "(":
            tokens.append(Token("lparen", ch, i))
        elif ch == ")":
            tokens.append(Token("rparen", ch, i))
        elif ch == ",":
            tokens.append(Token("comma", ch, i))
        else:
            raise IllegalCharacter(f"illegal character {ch!r}", i)
        i += 1
    return tokens


class _Parser:
    """Recursive-descent parser over a token list."""

    def __init__(self, tokens: list[Token], allowed_vars: frozenset[str]):
        self.tokens = tokens
        self.allowed = allowed_vars
        self.i = 0

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Token | None:
        tok = self.peek()
        if tok is not None:
            self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.next()
        if tok is None:
            raise ExprSyntaxError("unexpected end of expression")
        if tok.kind != kind or (text is not None and tok.text != text):
            raise ExprSyntaxError(f"expected {text or kind}, found {tok.text!r}", tok.pos)
        return tok

    def parse(self) -> Expr:
        e = self.sum()
        tok = self.peek()
        if tok is not None:
            raise ExprSyntaxError(f"trailing input {tok.text!r}", tok.pos)
        return e

    def sum(self) -> Expr:
        e = self.product()
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "op" and tok.text in "+-":
                self.next()
                e = BinOp(tok.text, e, self.product())
            else:
                return e

    def product(self) -> Expr:
        e = self.factor()
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "op" and tok.text in "*/":
                self.next()
                e = BinOp(tok.text, e, self.factor())
            else:
                return e

    def factor(self) -> Expr:
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text == "-":
            self.next()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text == "^":
            self.next()
            # right associative; the exponent may carry its own unary minus
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        tok = self.next()
        if tok is None:
            raise ExprSyntaxError("unexpected end of expression")
        if tok.kind == "number":
            return Const(float(tok.text))
        if tok.kind == "lparen":
            e = self.sum()
            self.expect("rparen")
            return e
        if tok.kind == "ident":
            nxt = self.peek()
            if nxt is not None and nxt.kind == "lparen":
                return self.call(tok)
            if tok.text in FUNCTIONS:
                raise ExprSyntaxError(f"function {tok.text!r} used without arguments", tok.pos)
            if tok.text not in self.allowed:
                raise UnknownVariable(f"unknown variable {tok.text!r}", tok.pos)
            return Var(tok.text)
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos)

    def call(self, name: Token) -> Expr:
        if name.text not in FUNCTIONS:
            raise UnknownFunction(f"unknown function {name.text!r}", name.pos)
        self.expect("lparen")
        args = [self.sum()]
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "comma":
                self.next()
                args.append(self.sum())
            else:
                break
        self.expect("rparen")
        if len(args) != 1:
            raise ArityMismatch(
                f"function {name.text!r} takes 1 argument, got {len(args)}", name.pos
            )
        return Call(name.text, args[0])


def parse_expr(tokens: list[Token], allowed_vars) -> Expr:
    """Parse a token list into an expression tree.

    ``allowed_vars`` is the variable alphabet for this context, e.g.
    {"t", "u"} for velocity components or {"x1", "x2"} for initial data.
    """
    return _Parser(tokens, frozenset(allowed_vars)).parse()


def parse(source: str, allowed_vars) -> Expr:
    """Tokenize and parse in one step."""
    return parse_expr(tokenize(source), allowed_vars)


_FN_IMPL = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": np.abs,
}


def eval_expr(e: Expr, bindings: dict):
    """Evaluate a tree with variables bound to floats or numpy arrays.

    Returns a float for all-scalar bindings and a numpy array otherwise.
    """
    result = _eval(e, bindings)
    if isinstance(result, np.ndarray) and result.ndim == 0:
        return float(result)
    if not isinstance(result, np.ndarray):
        return float(result)
    return result


def _eval(e: Expr, env: dict):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnknownVariable(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -_eval(e.child, env)
    if isinstance(e, BinOp):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if np.any(b == 0):
                raise EvalDomainError("division by zero")
            return a / b
        # "^"
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.power(np.asarray(a, dtype=float), b)
        if np.any(np.isnan(r)) and not (np.any(np.isnan(a)) or np.any(np.isnan(b))):
            raise EvalDomainError("fractional power of a negative base")
        if np.any(np.isinf(r)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b)):
            if np.any((np.asarray(a) == 0) & (np.asarray(b) < 0)):
                raise EvalDomainError("zero raised to a negative power")
        return r
    # Call
    v = _eval(e.arg, env)
    if e.fn == "log":
        if np.any(np.asarray(v) <= 0):
            raise EvalDomainError("log of a nonpositive value")
        return np.log(v)
    if e.fn == "sqrt":
        if np.any(np.asarray(v) < 0):
            raise EvalDomainError("sqrt of a negative value")
        return np.sqrt(v)
    return _FN_IMPL[e.fn](v)


# Printing precedence levels; higher binds tighter.
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        if e.op in "+-":
            return _PREC_ADD
        if e.op in "*/":
            return _PREC_MUL
        return _PREC_POW
    if isinstance(e, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def expr_to_str(e: Expr) -> str:
    """Render a tree to source text that parses back to the same tree."""
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = expr_to_str(e.child)
        if _prec(e.child) <= _PREC_MUL:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Call):
        return f"{e.fn}({expr_to_str(e.arg)})"
    left, right = expr_to_str(e.left), expr_to_str(e.right)
    if e.op in "+-":
        if _prec(e.left) < _PREC_ADD:
            left = f"({left})"
        if _prec(e.right) <= _PREC_ADD:
            right = f"({right})"
    elif e.op in "*/":
        if _prec(e.left) < _PREC_MUL:
            left = f"({left})"
        if _prec(e.right) <= _PREC_MUL:
            right = f"({right})"
    else:  # "^" binds tighter than unary minus and associates right
        if _prec(e.left) <= _PREC_POW:
            left = f"({left})"
        if _prec(e.right) < _PREC_NEG:
            right = f"({right})"
    return f"{left} {e.op} {right}" if e.op in "+-" else f"{left}{e.op}{right}"


def variables(e: Expr) -> frozenset[str]:
    """The set of variable names appearing in a tree."""
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Neg):
        return variables(e.child)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Call):
        return variables(e.arg)
    return frozenset()


_CBRT_EPS = float(np.finfo(float).eps) ** (1.0 / 3.0)


def numeric_partial(e: Expr, var: str, bindings: dict):
    """Second-order central-difference partial derivative of a tree.

    Step size follows h = eps^(1/3) * max(1, |v|) elementwise, with the
    usual representable-step correction.  Works on scalar or array
    bindings; returns the same shape as the binding for ``var``.
    """
    v = np.asarray(bindings[var], dtype=float)
    h = _CBRT_EPS * np.maximum(1.0, np.abs(v))
    hi, lo = v + h, v - h
    h_eff = (hi - lo) * 0.5  # actual representable half-step
    up = dict(bindings)
    dn = dict(bindings)
    up[var] = hi
    dn[var] = lo
    num = np.asarray(_eval(e, up), dtype=float) - np.asarray(_eval(e, dn), dtype=float)
    out = num / (2.0 * h_eff)
    if out.ndim == 0 and np.ndim(bindings[var]) == 0:
        return float(out)
    return out
