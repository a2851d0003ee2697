"""Arithmetic expression DSL used for all coefficient functions.

Recursive-descent parser over the grammar

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'

'^' is right-associative and unary minus binds tighter than the base of
'^', so ``-u1^2`` parses as ``(-u1)^2``.  Known functions: sin, cos, exp,
log, tanh, abs, sqrt, min, max, pow.  Constants: pi, e.  Variables are
u1..um plus the space/time names x, y, t.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Expr",
    "ExprSyntaxError",
    "ExprEvalError",
    "parse_expr",
    "eval_expr",
    "compile_expr",
    "pretty",
    "free_vars",
]

FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "tanh": (1, np.tanh),
    "abs": (1, np.abs),
    "sqrt": (1, np.sqrt),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "pow": (2, np.power),
}

CONSTANTS = {"pi": math.pi, "e": math.e}

_VAR_RE = re.compile(r"u[1-9][0-9]*$|[xyt]$")


class ExprSyntaxError(ValueError):
    """Raised on malformed expression source; carries line/column."""

    def __init__(self, message, source, pos):
        line = source.count("\n", 0, pos) + 1
        col = pos - (source.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col
        self.pos = pos


class ExprEvalError(ValueError):
    """Raised when evaluation hits an unbound variable or non-finite value."""


@dataclass(frozen=True)
class Expr:
    """One AST node.

    kind is 'num', 'const', 'var', 'neg', 'bin' or 'call'; ``value`` holds
    the literal, constant/variable name, operator symbol or function name.
    Spans are source offsets and do not take part in equality.
    """

    kind: str
    value: object
    args: tuple = ()
    span: tuple = field(default=(0, 0), compare=False)


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            if source[pos:].strip() == "":
                break
            raise ExprSyntaxError(
                f"unexpected character {source[pos:].lstrip()[0]!r}", source, pos
            )
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, symbol):
        kind, text, pos = self.peek()
        if kind != "op" or text != symbol:
            raise ExprSyntaxError(f"expected {symbol!r}", self.source, pos)
        return self.next()

    def fail(self, message):
        _, text, pos = self.peek()
        shown = repr(text) if text else "end of input"
        raise ExprSyntaxError(f"{message}, got {shown}", self.source, pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"trailing input at {text!r}", self.source, pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            _, op, _ = self.next()
            rhs = self.term()
            node = Expr("bin", op, (node, rhs), (node.span[0], rhs.span[1]))
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            _, op, _ = self.next()
            rhs = self.factor()
            node = Expr("bin", op, (node, rhs), (node.span[0], rhs.span[1]))
        return node

    def factor(self):
        base = self.unary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.next()
            expo = self.factor()  # right-associative
            return Expr("bin", "^", (base, expo), (base.span[0], expo.span[1]))
        return base

    def unary(self):
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.next()
            inner = self.unary()
            return Expr("neg", "-", (inner,), (pos, inner.span[1]))
        return self.atom()

    def atom(self):
        kind, text, pos = self.peek()
        if kind == "num":
            self.next()
            return Expr("num", float(text), (), (pos, pos + len(text)))
        if kind == "ident":
            self.next()
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                return self.call(text, pos)
            if text in CONSTANTS:
                return Expr("const", text, (), (pos, pos + len(text)))
            if _VAR_RE.fullmatch(text):
                return Expr("var", text, (), (pos, pos + len(text)))
            raise ExprSyntaxError(f"unknown identifier {text!r}", self.source, pos)
        if kind == "op" and text == "(":
            self.next()
            node = self.expr()
            self.expect_op(")")
            return node
        self.fail("expected a number, name or '('")

    def call(self, name, pos):
        if name not in FUNCTIONS:
            raise ExprSyntaxError(f"unknown function {name!r}", self.source, pos)
        arity = FUNCTIONS[name][0]
        self.expect_op("(")
        args = [self.expr()]
        while self.peek()[0] == "op" and self.peek()[1] == ",":
            self.next()
            args.append(self.expr())
        _, _, endpos = self.expect_op(")")
        if len(args) != arity:
            raise ExprSyntaxError(
                f"{name} takes {arity} argument(s), got {len(args)}", self.source, pos
            )
        return Expr("call", name, tuple(args), (pos, endpos + 1))


def parse_expr(source):
    """Parse ``source`` into an :class:`Expr` tree."""
    return _Parser(source).parse()


def compile_expr(node):
    """Compile an AST into ``f(env) -> value`` over an env of numpy values.

    The returned closure works identically for scalar and array bindings;
    it performs no finiteness checks (callers decide how to report those).
    """
    kind = node.kind
    if kind == "num":
        v = node.value
        return lambda env: v
    if kind == "const":
        v = CONSTANTS[node.value]
        return lambda env: v
    if kind == "var":
        name = node.value

        def load(env, name=name):
            try:
                return env[name]
            except KeyError:
                raise ExprEvalError(f"unbound variable {name!r}") from None

        return load
    if kind == "neg":
        f = compile_expr(node.args[0])
        return lambda env: -f(env)
    if kind == "bin":
        fa = compile_expr(node.args[0])
        fb = compile_expr(node.args[1])
        op = node.value
        if op == "+":
            return lambda env: fa(env) + fb(env)
        if op == "-":
            return lambda env: fa(env) - fb(env)
        if op == "*":
            return lambda env: fa(env) * fb(env)
        if op == "/":
            return lambda env: _div(fa(env), fb(env))
        if op == "^":
            return lambda env: _pow(fa(env), fb(env))
        raise AssertionError(op)
    if kind == "call":
        fn = FUNCTIONS[node.value][1]
        fargs = [compile_expr(a) for a in node.args]
        if len(fargs) == 1:
            fa = fargs[0]
            return lambda env: _apply(fn, fa(env))
        fa, fb = fargs
        return lambda env: _apply(fn, fa(env), fb(env))
    raise AssertionError(kind)


def _div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.true_divide(a, b)


def _pow(a, b):
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return np.power(a, b)


def _apply(fn, *args):
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return fn(*args)


def eval_expr(node, bindings):
    """Evaluate at a point; raises :class:`ExprEvalError` on a non-finite result."""
    out = compile_expr(node)(bindings)
    val = float(out)
    if not math.isfinite(val):
        raise ExprEvalError(
            f"non-finite value {val!r} for {pretty(node)!r} at {dict(bindings)!r}"
        )
    return val


def pretty(node):
    """Fully parenthesized canonical form; reparsing yields an equal AST."""
    kind = node.kind
    if kind == "num":
        return repr(node.value)
    if kind in ("const", "var"):
        return node.value
    if kind == "neg":
        return f"(-{pretty(node.args[0])})"
    if kind == "bin":
        a, b = node.args
        return f"({pretty(a)} {node.value} {pretty(b)})"
    if kind == "call":
        return f"{node.value}({', '.join(pretty(a) for a in node.args)})"
    raise AssertionError(kind)


def free_vars(node):
    """Set of variable names appearing in the tree."""
    if node.kind == "var":
        return {node.value}
    out = set()
    for child in node.args:
        out |= free_vars(child)
    return out
