"""Expressions for smooth planar scalar fields.

Grammar (``^`` binds to an atom, and ``-`` builds an atom)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' uint)?
    atom   := number | 'x' | 'y' | 'sin(' expr ')' | 'cos(' expr ')'
            | 'exp(' expr ')' | '(' expr ')' | '-' atom

Note that ``-x^2`` therefore parses as ``(-x)^2``; the canonical printer
always emits ``-(x^2)`` style text for the other reading.

Besides evaluation, expressions produce bivariate Taylor jets (all mixed
partials up to a total order) by truncated power-series arithmetic, and
Python source for compiled field kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Union

import numpy as np

MAX_JET_ORDER = 12


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ExprEvalError(ArithmeticError):
    def __init__(self, message: str, node: "Expr"):
        super().__init__(f"{message} in '{to_string(node)}'")
        self.node = node


# --------------------------------------------------------------------------- nodes


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str  # 'x' or 'y'


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Func:
    name: str  # sin, cos, exp
    arg: "Expr"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


Expr = Union[Num, Var, BinOp, Pow, Func, Neg]

FUNCTIONS = ("sin", "cos", "exp")


# --------------------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, msg, pos=None):
        raise ExprSyntaxError(msg, self.pos if pos is None else pos)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.error(f"expected '{ch}'")
        self.pos += 1

    def parse(self) -> Expr:
        node = self.expr()
        if self.peek():
            self.error(f"unexpected character '{self.peek()}'")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in ("+", "-") and self.peek():
            op = self.text[self.pos]
            self.pos += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek() in ("*", "/") and self.peek():
            op = self.text[self.pos]
            self.pos += 1
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        node = self.atom()
        if self.peek() == "^":
            caret = self.pos
            self.pos += 1
            self.skip()
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            if start == self.pos:
                self.error("exponent after '^' must be a non-negative integer", caret)
            node = Pow(node, int(self.text[start : self.pos]))
        return node

    def atom(self):
        ch = self.peek()
        if ch == "":
            self.error("unexpected end of input")
        if ch == "-":
            self.pos += 1
            return Neg(self.atom())
        if ch == "(":
            self.pos += 1
            node = self.expr()
            self.expect(")")
            return node
        if ch.isdigit() or ch == ".":
            return self.number()
        if ch.isalpha():
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isalpha():
                self.pos += 1
            word = self.text[start : self.pos]
            if word in ("x", "y"):
                return Var(word)
            if word in FUNCTIONS:
                self.expect("(")
                node = self.expr()
                self.expect(")")
                return Func(word, node)
            self.error(f"unknown identifier '{word}'", start)
        self.error(f"unexpected character '{ch}'")

    def number(self):
        t, start = self.text, self.pos
        i = start
        while i < len(t) and (t[i].isdigit() or t[i] == "."):
            i += 1
        if i < len(t) and t[i] in "eE":
            j = i + 1
            if j < len(t) and t[j] in "+-":
                j += 1
            if j < len(t) and t[j].isdigit():
                while j < len(t) and t[j].isdigit():
                    j += 1
                i = j
        try:
            value = float(t[start:i])
        except ValueError:
            self.error(f"malformed number '{t[start:i]}'", start)
        self.pos = i
        return Num(value)


def parse(text: str) -> Expr:
    return _Parser(text).parse()


# --------------------------------------------------------------------------- printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(v: float) -> str:
    if v < 0 or math.copysign(1.0, v) < 0:
        return f"-({_fmt_num(-v)})" if v != 0 else "0.0"
    return repr(float(v))


def to_string(e: Expr) -> str:
    """Canonical text; ``parse(to_string(e))`` prints back identically."""
    return _print(e, 0)


def _print(e: Expr, ctx: int) -> str:
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({_print(e.arg, 0)})"
    if isinstance(e, Neg):
        return "-" + _atom(e.arg)
    if isinstance(e, Pow):
        return f"{_atom(e.base)}^{e.exponent}"
    p = _PREC[e.op]
    # right operand of - and / needs parens at equal precedence
    s = f"{_print(e.left, p)} {e.op} {_print(e.right, p + 1)}"
    return f"({s})" if p < ctx else s


def _atom(e: Expr) -> str:
    s = _print(e, 3)
    if isinstance(e, (Num, Var, Func)) and not s.startswith("-"):
        return s
    if s.startswith("(") and _balanced_outer(s):
        return s
    return f"({s})"


def _balanced_outer(s: str) -> bool:
    depth = 0
    for i, c in enumerate(s):
        depth += c == "("
        depth -= c == ")"
        if depth == 0 and i < len(s) - 1:
            return False
    return True


# --------------------------------------------------------------------------- builders


def num(v: float) -> Expr:
    return Num(float(v)) if v >= 0 else Neg(Num(float(-v)))


def add(*terms: Expr) -> Expr:
    return reduce(lambda a, b: BinOp("+", a, b), terms)


def mul(*factors: Expr) -> Expr:
    return reduce(lambda a, b: BinOp("*", a, b), factors)


def sub(a: Expr, b: Expr) -> Expr:
    return BinOp("-", a, b)


def substitute(e: Expr, x: Expr | None = None, y: Expr | None = None) -> Expr:
    """Replace variables by expressions."""
    if isinstance(e, Var):
        rep = x if e.name == "x" else y
        return e if rep is None else rep
    if isinstance(e, Num):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, x, y), substitute(e.right, x, y))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, x, y), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, x, y))
    return Neg(substitute(e.arg, x, y))


# --------------------------------------------------------------------------- evaluation


def evaluate(e: Expr, x: float, y: float) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return x if e.name == "x" else y
    if isinstance(e, Neg):
        return -evaluate(e.arg, x, y)
    if isinstance(e, Pow):
        return evaluate(e.base, x, y) ** e.exponent
    if isinstance(e, Func):
        a = evaluate(e.arg, x, y)
        return {"sin": math.sin, "cos": math.cos, "exp": math.exp}[e.name](a)
    a = evaluate(e.left, x, y)
    b = evaluate(e.right, x, y)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if b == 0.0:
        raise ExprEvalError("division by zero", e)
    return a / b


# --------------------------------------------------------------------------- jets


class Jet:
    """Truncated bivariate Taylor series of a function at ``(x0, y0)``.

    ``coeffs[i, j]`` is the coefficient of ``u**i * v**j`` in
    ``f(x0 + u, y0 + v)``; entries with ``i + j > order`` are zero.
    """

    __slots__ = ("x0", "y0", "order", "coeffs")

    def __init__(self, x0, y0, order, coeffs):
        self.x0 = x0
        self.y0 = y0
        self.order = order
        self.coeffs = coeffs

    # partial derivative d^{i+j} f / dx^i dy^j at the base point
    def partial(self, i: int, j: int = 0) -> float:
        if i + j > self.order:
            raise ValueError("requested partial exceeds jet order")
        return float(self.coeffs[i, j] * math.factorial(i) * math.factorial(j))

    def __getitem__(self, ij):
        return self.partial(*ij)

    @property
    def value(self) -> float:
        return float(self.coeffs[0, 0])

    def x_derivatives(self) -> np.ndarray:
        return np.array([self.partial(i, 0) for i in range(self.order + 1)])


def _mask(n):
    i, j = np.indices((n + 1, n + 1))
    return (i + j) <= n


def _jmul(a, b, n, mask):
    out = np.zeros_like(a)
    nz = np.argwhere(a != 0)
    for i, j in nz:
        out[i:, j:] += a[i, j] * b[: n + 1 - i, : n + 1 - j]
    out[~mask] = 0.0
    return out


def _series(a, coeffs, n, mask):
    """sum_k coeffs[k] * (a - a00)^k for a jet array a."""
    h = a.copy()
    h[0, 0] = 0.0
    out = np.zeros_like(a)
    out[0, 0] = coeffs[0]
    p = np.zeros_like(a)
    p[0, 0] = 1.0
    for k in range(1, n + 1):
        p = _jmul(p, h, n, mask)
        if coeffs[k] != 0.0:
            out += coeffs[k] * p
    return out


def jet(e: Expr, x: float, y: float, order: int) -> Jet:
    if order < 0 or order > MAX_JET_ORDER:
        raise ValueError(f"jet order {order} outside [0, {MAX_JET_ORDER}]")
    n = order
    mask = _mask(n)

    def rec(node):
        if isinstance(node, Num):
            out = np.zeros((n + 1, n + 1))
            out[0, 0] = node.value
            return out
        if isinstance(node, Var):
            out = np.zeros((n + 1, n + 1))
            if node.name == "x":
                out[0, 0] = x
                if n >= 1:
                    out[1, 0] = 1.0
            else:
                out[0, 0] = y
                if n >= 1:
                    out[0, 1] = 1.0
            return out
        if isinstance(node, Neg):
            return -rec(node.arg)
        if isinstance(node, Pow):
            base = rec(node.base)
            out = np.zeros((n + 1, n + 1))
            out[0, 0] = 1.0
            for _ in range(node.exponent):
                out = _jmul(out, base, n, mask)
            return out
        if isinstance(node, Func):
            a = rec(node.arg)
            a0 = a[0, 0]
            f = [1.0 / math.factorial(k) for k in range(n + 1)]
            if node.name == "exp":
                c = [math.exp(a0) * fk for fk in f]
            elif node.name == "sin":
                # derivatives of sin cycle sin, cos, -sin, -cos
                cyc = [math.sin(a0), math.cos(a0), -math.sin(a0), -math.cos(a0)]
                c = [cyc[k % 4] * f[k] for k in range(n + 1)]
            else:
                cyc = [math.cos(a0), -math.sin(a0), -math.cos(a0), math.sin(a0)]
                c = [cyc[k % 4] * f[k] for k in range(n + 1)]
            return _series(a, c, n, mask)
        a = rec(node.left)
        b = rec(node.right)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return _jmul(a, b, n, mask)
        b0 = b[0, 0]
        if b0 == 0.0:
            raise ExprEvalError("division by zero", node)
        inv = _series(b, [(-1.0) ** k / b0 ** (k + 1) for k in range(n + 1)], n, mask)
        return _jmul(a, inv, n, mask)

    return Jet(x, y, n, rec(e))


# --------------------------------------------------------------------------- codegen


def to_source(e: Expr, xname: str = "x", yname: str = "y") -> str:
    """Python expression text using bare ``sin``/``cos``/``exp`` names."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return xname if e.name == "x" else yname
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg, xname, yname)})"
    if isinstance(e, Pow):
        if e.exponent == 0:
            return "1.0"
        b = to_source(e.base, xname, yname)
        return "(" + "*".join([b] * e.exponent) + ")"
    if isinstance(e, Func):
        return f"{e.name}({to_source(e.arg, xname, yname)})"
    return f"({to_source(e.left, xname, yname)} {e.op} {to_source(e.right, xname, yname)})"


def compile_scalar(e: Expr):
    """Plain-Python callable ``f(x, y)`` for fast repeated evaluation."""
    src = f"def _f(x, y):\n    return {to_source(e)}\n"
    ns = {"sin": math.sin, "cos": math.cos, "exp": math.exp}
    exec(src, ns)
    return ns["_f"]


def is_constant_in(e: Expr, name: str) -> bool:
    if isinstance(e, Var):
        return e.name != name
    if isinstance(e, Num):
        return True
    if isinstance(e, BinOp):
        return is_constant_in(e.left, name) and is_constant_in(e.right, name)
    return is_constant_in(e.base if isinstance(e, Pow) else e.arg, name)
