"""Expression AST with a text parser, point evaluation and interval evaluation.

All system dynamics (drift, input matrix) and safe-set functions are held as
small expression trees.  Two evaluation modes are provided: exact pointwise
evaluation and inclusion-isotone interval evaluation, the latter being the
substrate for the branch-and-bound verifier.

Interval soundness model: instead of directed rounding, a fixed slack of
``SLACK = 1e-9`` is added to both endpoints after every primitive operation.
The verifier tolerance dominates this slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

SLACK = 1e-9

_TWO_PI = 2.0 * math.pi


class ExprError(Exception):
    """Raised for malformed expressions or evaluation failures."""


class ParseError(ExprError):
    """Syntax error; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class SplitRequired(ExprError):
    """Interval division hit a denominator straddling zero."""


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] with lo <= hi."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    def width(self) -> float:
        return self.hi - self.lo

    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def contains_interval(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi


def _pad(lo: float, hi: float) -> Interval:
    return Interval(lo - SLACK, hi + SLACK)


def _iv_add(a: Interval, b: Interval) -> Interval:
    return _pad(a.lo + b.lo, a.hi + b.hi)


def _iv_sub(a: Interval, b: Interval) -> Interval:
    return _pad(a.lo - b.hi, a.hi - b.lo)


def _iv_neg(a: Interval) -> Interval:
    return Interval(-a.hi, -a.lo)


def _iv_mul(a: Interval, b: Interval) -> Interval:
    cands = (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
    return _pad(min(cands), max(cands))


def _iv_div(a: Interval, b: Interval) -> Interval:
    if b.lo <= 0.0 <= b.hi:
        raise SplitRequired("division by interval containing zero")
    cands = (a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi)
    return _pad(min(cands), max(cands))


def _iv_pow(a: Interval, k: int) -> Interval:
    if k == 0:
        return Interval(1.0, 1.0)
    lo, hi = a.lo**k, a.hi**k
    if k % 2 == 0 and a.lo < 0.0 < a.hi:
        return _pad(0.0, max(lo, hi))
    return _pad(min(lo, hi), max(lo, hi))


def _iv_monotone(a: Interval, fn) -> Interval:
    lo, hi = fn(a.lo), fn(a.hi)
    return _pad(lo, hi)


def _iv_sin(a: Interval) -> Interval:
    # Exact range via the critical points pi/2 + n*pi inside [lo, hi].
    if a.width() >= _TWO_PI:
        return Interval(-1.0, 1.0)
    lo, hi = math.sin(a.lo), math.sin(a.hi)
    vlo, vhi = min(lo, hi), max(lo, hi)
    n_lo = math.ceil((a.lo - math.pi / 2) / math.pi)
    n_hi = math.floor((a.hi - math.pi / 2) / math.pi)
    for n in range(n_lo, n_hi + 1):
        if n % 2 == 0:
            vhi = 1.0
        else:
            vlo = -1.0
    return _pad(max(vlo, -1.0), min(vhi, 1.0))


def _iv_cos(a: Interval) -> Interval:
    return _iv_sin(Interval(a.lo + math.pi / 2, a.hi + math.pi / 2))


def log1pexp(z: float) -> float:
    """Softplus log(1 + exp(z)) with a linear asymptote above z = 30."""
    if z > 30.0:
        return z
    if z < -30.0:
        return math.exp(z)
    return math.log1p(math.exp(z))


def sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


# Node kinds reachable from the parser.
_PARSE_FNS = {"sin", "cos", "exp"}
# Additional internal node kinds used by the verifier to encode smooth
# networks (monotone increasing, so exact endpoint ranges apply).
_UNARY = {
    "sin": (math.sin, _iv_sin),
    "cos": (math.cos, _iv_cos),
    "exp": (math.exp, lambda a: _iv_monotone(a, math.exp)),
    "neg": (lambda v: -v, _iv_neg),
    "softplus": (log1pexp, lambda a: _iv_monotone(a, log1pexp)),
    "sigmoid": (sigmoid, lambda a: _iv_monotone(a, sigmoid)),
    "tanh": (math.tanh, lambda a: _iv_monotone(a, math.tanh)),
}


@dataclass(frozen=True)
class Expr:
    """Immutable expression node.

    ``kind`` is one of: const, var, add, sub, mul, div, pow, neg, sin, cos,
    exp, softplus, sigmoid, tanh.  ``value`` holds the constant for const,
    the 0-based variable index for var, and the exponent for pow.
    """

    kind: str
    value: float = 0.0
    children: tuple = ()

    # -- constructors -----------------------------------------------------

    @staticmethod
    def const(v: float) -> "Expr":
        return Expr("const", float(v))

    @staticmethod
    def var(i: int) -> "Expr":
        if i < 0:
            raise ExprError(f"negative variable index {i}")
        return Expr("var", float(i))

    def __add__(self, other: "Expr") -> "Expr":
        return Expr("add", children=(self, _coerce(other)))

    def __sub__(self, other: "Expr") -> "Expr":
        return Expr("sub", children=(self, _coerce(other)))

    def __mul__(self, other: "Expr") -> "Expr":
        return Expr("mul", children=(self, _coerce(other)))

    def __truediv__(self, other: "Expr") -> "Expr":
        return Expr("div", children=(self, _coerce(other)))

    def __neg__(self) -> "Expr":
        return Expr("neg", children=(self,))

    def __pow__(self, k: int) -> "Expr":
        if not isinstance(k, int) or k < 0:
            raise ExprError("pow exponent must be a non-negative integer")
        return Expr("pow", float(k), (self,))

    @staticmethod
    def unary(kind: str, child: "Expr") -> "Expr":
        if kind not in _UNARY:
            raise ExprError(f"unknown function {kind!r}")
        return Expr(kind, children=(child,))

    # -- queries ----------------------------------------------------------

    def max_var(self) -> int:
        """Largest variable index used, or -1 for a constant expression."""
        if self.kind == "var":
            return int(self.value)
        return max((c.max_var() for c in self.children), default=-1)

    # -- printing ---------------------------------------------------------

    def to_text(self) -> str:
        """Render in the parser grammar (variables printed 1-based)."""
        return _print(self, 0)


def _coerce(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Expr.const(v)


def _print(e: Expr, prec: int) -> str:
    if e.kind == "const":
        v = e.value
        if v < 0:
            return f"(0 - {-v!r})"
        return repr(v)
    if e.kind == "var":
        return f"x{int(e.value) + 1}"
    if e.kind in ("add", "sub"):
        op = "+" if e.kind == "add" else "-"
        s = f"{_print(e.children[0], 1)} {op} {_print(e.children[1], 2)}"
        return f"({s})" if prec > 1 else s
    if e.kind in ("mul", "div"):
        op = "*" if e.kind == "mul" else "/"
        s = f"{_print(e.children[0], 2)} {op} {_print(e.children[1], 3)}"
        return f"({s})" if prec > 2 else s
    if e.kind == "pow":
        return f"{_print(e.children[0], 4)}^{int(e.value)}"
    if e.kind == "neg":
        return f"(0 - {_print(e.children[0], 2)})"
    if e.kind in _PARSE_FNS:
        return f"{e.kind}({_print(e.children[0], 0)})"
    raise ExprError(f"node kind {e.kind!r} has no textual form")


def eval_point(e: Expr, x: Sequence[float]) -> float:
    """Exact recursive evaluation at a point.  0^0 is defined as 1."""
    k = e.kind
    if k == "const":
        return e.value
    if k == "var":
        i = int(e.value)
        if i >= len(x):
            raise ExprError(f"variable x{i + 1} outside point of dim {len(x)}")
        return float(x[i])
    if k == "add":
        return eval_point(e.children[0], x) + eval_point(e.children[1], x)
    if k == "sub":
        return eval_point(e.children[0], x) - eval_point(e.children[1], x)
    if k == "mul":
        return eval_point(e.children[0], x) * eval_point(e.children[1], x)
    if k == "div":
        d = eval_point(e.children[1], x)
        if d == 0.0:
            raise ExprError("division by zero")
        return eval_point(e.children[0], x) / d
    if k == "pow":
        b = eval_point(e.children[0], x)
        n = int(e.value)
        if b == 0.0 and n == 0:
            return 1.0
        return b**n
    fn = _UNARY.get(k)
    if fn is None:
        raise ExprError(f"unknown node kind {k!r}")
    return fn[0](eval_point(e.children[0], x))


def eval_interval(e: Expr, box: Sequence[Interval]) -> Interval:
    """Inclusion-isotone interval evaluation over an axis-aligned box."""
    k = e.kind
    if k == "const":
        return Interval(e.value, e.value)
    if k == "var":
        i = int(e.value)
        if i >= len(box):
            raise ExprError(f"variable x{i + 1} outside box of dim {len(box)}")
        return box[i]
    if k == "add":
        return _iv_add(eval_interval(e.children[0], box), eval_interval(e.children[1], box))
    if k == "sub":
        return _iv_sub(eval_interval(e.children[0], box), eval_interval(e.children[1], box))
    if k == "mul":
        return _iv_mul(eval_interval(e.children[0], box), eval_interval(e.children[1], box))
    if k == "div":
        return _iv_div(eval_interval(e.children[0], box), eval_interval(e.children[1], box))
    if k == "pow":
        return _iv_pow(eval_interval(e.children[0], box), int(e.value))
    fn = _UNARY.get(k)
    if fn is None:
        raise ExprError(f"unknown node kind {k!r}")
    return fn[1](eval_interval(e.children[0], box))


# ---------------------------------------------------------------------------
# Parser
#
# expr   := term (('+'|'-') term)*
# term   := factor (('*'|'/') factor)*
# factor := base ('^' uint)?
# base   := number | 'x'uint | '(' expr ')' | fn '(' expr ')' | '-' base
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.pos = 0

    def error(self, msg: str):
        raise ParseError(msg, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> Expr:
        e = self.expr()
        self.skip_ws()
        if self.pos != len(self.text):
            self.error(f"unexpected trailing input {self.text[self.pos:]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            c = self.peek()
            if c == "+":
                self.pos += 1
                e = e + self.term()
            elif c == "-":
                self.pos += 1
                e = e - self.term()
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            c = self.peek()
            if c == "*":
                self.pos += 1
                e = e * self.factor()
            elif c == "/":
                self.pos += 1
                e = e / self.factor()
            else:
                return e

    def factor(self) -> Expr:
        e = self.base()
        if self.peek() == "^":
            self.pos += 1
            self.skip_ws()
            n = self.uint()
            e = e**n
        return e

    def uint(self) -> int:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            self.error("expected unsigned integer")
        return int(self.text[start : self.pos])

    def number(self) -> float:
        start = self.pos
        n = len(self.text)
        while self.pos < n and (self.text[self.pos].isdigit() or self.text[self.pos] == "."):
            self.pos += 1
        if self.pos < n and self.text[self.pos] in "eE":
            save = self.pos
            self.pos += 1
            if self.pos < n and self.text[self.pos] in "+-":
                self.pos += 1
            if self.pos < n and self.text[self.pos].isdigit():
                while self.pos < n and self.text[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = save
        try:
            return float(self.text[start : self.pos])
        except ValueError:
            self.pos = start
            self.error("malformed number")

    def base(self) -> Expr:
        c = self.peek()
        if c == "-":
            self.pos += 1
            return -self.base()
        if c == "(":
            self.pos += 1
            e = self.expr()
            if self.peek() != ")":
                self.error("expected ')'")
            self.pos += 1
            return e
        if c.isdigit() or c == ".":
            return Expr.const(self.number())
        if c.isalpha():
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isalpha():
                self.pos += 1
            name = self.text[start : self.pos]
            if name == "x":
                idx = self.uint()
                if idx < 1 or idx > self.dim:
                    self.pos = start
                    self.error(f"variable x{idx} out of range for dim {self.dim}")
                return Expr.var(idx - 1)
            if name == "pi":
                return Expr.const(math.pi)
            if name in _PARSE_FNS:
                if self.peek() != "(":
                    self.error(f"expected '(' after {name}")
                self.pos += 1
                e = self.expr()
                if self.peek() != ")":
                    self.error("expected ')'")
                self.pos += 1
                return Expr.unary(name, e)
            self.pos = start
            self.error(f"unknown identifier {name!r}")
        self.error("expected expression")


def parse_expr(text: str, dim: int) -> Expr:
    """Parse ``text`` over variables x1..x<dim> (stored 0-based)."""
    return _Parser(text, dim).parse()


def affine_expr(w: Sequence[float], b: float) -> Expr:
    """Build the expression w . x + b."""
    e = Expr.const(b)
    for i, wi in enumerate(w):
        if wi != 0.0:
            e = e + Expr.const(wi) * Expr.var(i)
    return e
