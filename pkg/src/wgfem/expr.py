"""A small expression language for user-supplied coefficients and data.

Grammar (``^`` is right associative and binds tighter than unary minus)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := atom ("^" unary)?
    atom    := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"

Variables are ``x``, ``y`` and ``u``; functions are sin, cos, exp, sqrt and
abs.  Evaluation is vectorised over numpy arrays.  Parse errors carry the
byte offset of the offending token.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "ExprDomainError",
    "Num",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "parse_expr",
]

VARIABLES = ("x", "y", "u")
CONSTANTS = {"pi": math.pi}
FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class ExprDomainError(ExprError):
    pass


# -- AST -------------------------------------------------------------------------

class Node:
    def variables(self):
        return set()


@dataclass(frozen=True)
class Num(Node):
    value: float

    def evaluate(self, **env):
        return self.value

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Const(Node):
    name: str

    def evaluate(self, **env):
        return CONSTANTS[self.name]

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Var(Node):
    name: str

    def evaluate(self, **env):
        try:
            return env[self.name]
        except KeyError:
            raise ExprError(f"no value bound for variable {self.name!r}") from None

    def variables(self):
        return {self.name}

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Node):
    operand: Node

    def evaluate(self, **env):
        return -self.operand.evaluate(**env)

    def variables(self):
        return self.operand.variables()

    def __str__(self):
        return f"(-{self.operand})"


def _power(base, expo):
    base = np.asarray(base, dtype=float)
    expo = np.asarray(expo, dtype=float)
    if np.any((base < 0) & (expo != np.round(expo))):
        raise ExprDomainError("negative base raised to a non-integer power")
    if np.any((base == 0) & (expo < 0)):
        raise ExprDomainError("zero raised to a negative power")
    return np.power(base, expo)


def _divide(num, den):
    den = np.asarray(den, dtype=float)
    if np.any(den == 0):
        raise ExprDomainError("division by zero")
    return np.divide(num, den)


_BINOPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _divide,
    "^": _power,
}


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def evaluate(self, **env):
        return _BINOPS[self.op](self.left.evaluate(**env), self.right.evaluate(**env))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node

    def evaluate(self, **env):
        val = self.arg.evaluate(**env)
        if self.func == "sqrt" and np.any(np.asarray(val) < 0):
            raise ExprDomainError("sqrt of a negative number")
        return FUNCTIONS[self.func](val)

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"{self.func}({self.arg})"


# -- lexer -----------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}",
                                  len(text[:pos].encode()))
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), len(text[:pos].encode())))
        pos = m.end()
    toks.append(_Tok("end", "", len(text.encode())))
    return toks


# -- parser ----------------------------------------------------------------------

class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def accept(self, text):
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", self.tok.offset)

    def parse(self):
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.accept("-"):
            return Neg(self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            value = float(tok.text)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"numeric literal {tok.text} overflows", tok.offset)
            return Num(value)
        if tok.kind == "ident":
            self.i += 1
            name = tok.text
            if name in FUNCTIONS:
                if not (self.tok.kind == "op" and self.tok.text == "("):
                    raise ExprSyntaxError(f"function {name!r} needs an argument list",
                                          self.tok.offset)
                self.i += 1
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ExprSyntaxError(f"{name} takes 1 argument, got {len(args)}",
                                          tok.offset)
                return Call(name, args[0])
            if self.tok.kind == "op" and self.tok.text == "(":
                raise ExprSyntaxError(f"{name!r} is not a function", tok.offset)
            if name in CONSTANTS:
                return Const(name)
            if name in VARIABLES:
                return Var(name)
            raise ExprSyntaxError(f"unknown identifier {name!r}", tok.offset)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", tok.offset)


def parse_expr(text):
    """Parse an expression string into an AST (``str(ast)`` prints it back)."""
    if not isinstance(text, str):
        raise ExprError("expression must be a string")
    return _Parser(text).parse()
